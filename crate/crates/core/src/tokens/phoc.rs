//! Pyramidal histogram of characters.
//!
//! Layout (604 bits): unigrams `a-z0-9` at levels 2..=5, level-major then
//! region then symbol (504 bits), followed by the 50 bigrams of
//! `data/phoc_bigrams.txt` at level 2, region-major (100 bits).

use std::sync::OnceLock;

use super::normalize_token_text;
use crate::error::{Error, Result};

pub const PHOC_UNIGRAMS: &str = "abcdefghijklmnopqrstuvwxyz0123456789";
pub const PHOC_LEVELS: [usize; 4] = [2, 3, 4, 5];
pub const PHOC_BIGRAM_LEVEL: usize = 2;
pub const PHOC_DIM: usize = 604;

const BIGRAM_TABLE: &str = include_str!("../../data/phoc_bigrams.txt");

pub fn phoc_bigrams() -> &'static [String] {
    static TABLE: OnceLock<Vec<String>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let v: Vec<String> = BIGRAM_TABLE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        assert_eq!(v.len(), 50, "bigram table must hold 50 entries");
        v
    })
}

fn unigram_index(c: u8) -> Option<usize> {
    match c {
        b'a'..=b'z' => Some((c - b'a') as usize),
        b'0'..=b'9' => Some(26 + (c - b'0') as usize),
        _ => None,
    }
}

/// Whether the interval `[start/n, (start+span)/n]` covers at least half of its
/// own width inside region `[r/level, (r+1)/level]`. Exact in integers.
fn occupies(start: usize, span: usize, n: usize, region: usize, level: usize) -> bool {
    // Scale both intervals by n * level.
    let lo = (start * level).max(region * n);
    let hi = ((start + span) * level).min((region + 1) * n);
    let overlap = hi.saturating_sub(lo);
    2 * overlap >= span * level
}

/// Binary PHOC of `word`. Spaces are dropped so multi-word names encode as one string.
pub fn phoc_encode(word: &str) -> Result<Vec<u8>> {
    let norm: Vec<u8> = normalize_token_text(word).bytes().filter(|&b| b != b' ').collect();
    if norm.is_empty() {
        return Err(Error::EmptyWord(word.to_string()));
    }
    let n = norm.len();
    let mut out = vec![0u8; PHOC_DIM];

    let mut offset = 0;
    for &level in &PHOC_LEVELS {
        for (k, &c) in norm.iter().enumerate() {
            let s = unigram_index(c).expect("normalized text is alphanumeric");
            for r in 0..level {
                if occupies(k, 1, n, r, level) {
                    out[offset + r * 36 + s] = 1;
                }
            }
        }
        offset += level * 36;
    }

    let bigrams = phoc_bigrams();
    let nb = bigrams.len();
    for k in 0..n.saturating_sub(1) {
        let pair = &norm[k..k + 2];
        if let Some(b) = bigrams.iter().position(|g| g.as_bytes() == pair) {
            for r in 0..PHOC_BIGRAM_LEVEL {
                if occupies(k, 2, n, r, PHOC_BIGRAM_LEVEL) {
                    out[offset + r * nb + b] = 1;
                }
            }
        }
    }
    Ok(out)
}
