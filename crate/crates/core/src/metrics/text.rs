//! BLEU-4 and ROUGE-L over normalized whitespace tokens.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tokens::normalize_token_text;

/// Substituted for a zero n-gram match count.
pub const BLEU_SMOOTHING: f64 = 1e-9;
/// `β²` of the ROUGE-L F-measure.
pub const ROUGE_BETA_SQ: f64 = 1.2;

pub fn tokenize(text: &str) -> Vec<String> {
    normalize_token_text(text).split(' ').filter(|w| !w.is_empty()).map(String::from).collect()
}

pub(crate) fn ngram_counts(words: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut out = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *out.entry(w).or_insert(0) += 1;
        }
    }
    out
}

/// Clipped matches and candidate n-gram totals for `n = 1..=4`, plus the
/// candidate length and the closest reference length (ties to the shorter).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BleuStats {
    pub matches: [usize; 4],
    pub totals: [usize; 4],
    pub cand_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn compute(candidate: &str, references: &[String]) -> Result<Self> {
        if references.is_empty() {
            return Err(Error::EmptyReferenceSet);
        }
        let cand = tokenize(candidate);
        let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
        let mut stats = BleuStats {
            cand_len: cand.len(),
            ..Default::default()
        };
        stats.ref_len = refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(cand.len()), l))
            .unwrap_or(0);
        for n in 1..=4 {
            let c = ngram_counts(&cand, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (g, k) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(k);
                }
            }
            stats.totals[n - 1] = c.values().sum();
            stats.matches[n - 1] = c.iter().map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        }
        Ok(stats)
    }

    pub fn add(&mut self, other: &BleuStats) {
        for n in 0..4 {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.cand_len += other.cand_len;
        self.ref_len += other.ref_len;
    }

    pub fn score(&self) -> f64 {
        if self.cand_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        for n in 0..4 {
            let m = if self.matches[n] == 0 { BLEU_SMOOTHING } else { self.matches[n] as f64 };
            log_sum += (m / self.totals[n].max(1) as f64).ln();
        }
        let bp = if self.cand_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.cand_len as f64).exp()
        };
        bp * (log_sum / 4.0).exp()
    }
}

/// Sentence BLEU-4 with uniform weights and brevity penalty.
pub fn bleu4(candidate: &str, references: &[String]) -> Result<f64> {
    Ok(BleuStats::compute(candidate, references)?.score())
}

/// Corpus BLEU-4: n-gram statistics are summed over images before scoring.
pub fn corpus_bleu4(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::dim("corpus_bleu4", references.len(), candidates.len()));
    }
    let mut total = BleuStats::default();
    for (c, r) in candidates.iter().zip(references) {
        total.add(&BleuStats::compute(c, r)?);
    }
    Ok(total.score())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS F-measure, maximized over references.
pub fn rouge_l(candidate: &str, references: &[String]) -> Result<f64> {
    if references.is_empty() {
        return Err(Error::EmptyReferenceSet);
    }
    let cand = tokenize(candidate);
    let mut best: f64 = 0.0;
    for r in references {
        let r = tokenize(r);
        let lcs = lcs_len(&cand, &r);
        if lcs == 0 {
            continue;
        }
        let p = lcs as f64 / cand.len() as f64;
        let rec = lcs as f64 / r.len() as f64;
        let f = (1.0 + ROUGE_BETA_SQ) * p * rec / (rec + ROUGE_BETA_SQ * p);
        best = best.max(f);
    }
    Ok(best)
}
