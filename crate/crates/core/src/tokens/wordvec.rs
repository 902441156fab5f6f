use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use super::normalize_token_text;
use crate::error::{Error, Result};

/// Source of per-word text vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorProvider {
    /// Deterministic pseudorandom unit vector per word.
    HashFallback { dim: usize },
    /// Pretrained table; misses fall back to the hash vector of the same dimension.
    FileTable {
        dim: usize,
        table: HashMap<String, Vec<f64>>,
    },
}

impl VectorProvider {
    pub fn hash(dim: usize) -> Self {
        VectorProvider::HashFallback { dim }
    }

    pub fn dim(&self) -> usize {
        match self {
            VectorProvider::HashFallback { dim } | VectorProvider::FileTable { dim, .. } => *dim,
        }
    }

    /// Parses `word v1 .. v_dim` lines. Blank lines are skipped.
    pub fn parse_table(text: &str, dim: usize) -> Result<Self> {
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|e| Error::Parse {
                        line: i + 1,
                        message: format!("bad vector component {p:?}: {e}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if values.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {dim} components, found {}", values.len()),
                });
            }
            table.insert(normalize_token_text(word), values);
        }
        Ok(VectorProvider::FileTable { dim, table })
    }

    pub fn load_table(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        Self::parse_table(&std::fs::read_to_string(path)?, dim)
    }

    fn single(&self, word: &str) -> Vec<f64> {
        match self {
            VectorProvider::HashFallback { dim } => hash_unit_vector(word, *dim),
            VectorProvider::FileTable { dim, table } => table
                .get(word)
                .cloned()
                .unwrap_or_else(|| hash_unit_vector(word, *dim)),
        }
    }
}

/// Unit vector drawn from a generator seeded by SHA-256 of `key`.
pub fn hash_unit_vector(key: &str, dim: usize) -> Vec<f64> {
    let seed: [u8; 32] = Sha256::digest(key.as_bytes()).into();
    let mut rng = ChaCha8Rng::from_seed(seed);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 || dim == 0 {
            return v.into_iter().map(|x| x / norm.max(f64::MIN_POSITIVE)).collect();
        }
    }
}

/// Text vector for a possibly multi-word string: the mean of per-word vectors.
pub fn word_vector(word: &str, provider: &VectorProvider) -> Vec<f64> {
    let norm = normalize_token_text(word);
    let dim = provider.dim();
    let parts: Vec<&str> = norm.split(' ').filter(|p| !p.is_empty()).collect();
    if parts.is_empty() {
        return vec![0.0; dim];
    }
    let mut acc = vec![0.0; dim];
    for p in &parts {
        for (a, v) in acc.iter_mut().zip(provider.single(p)) {
            *a += v;
        }
    }
    let k = parts.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_fallback_is_deterministic_unit() {
        let p = VectorProvider::hash(300);
        let a = word_vector("bernie", &p);
        let b = word_vector("bernie", &p);
        assert_eq!(a, b);
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-9);
        assert_ne!(a, word_vector("sanders", &p));
    }

    #[test]
    fn file_table_lookup_and_fallback() {
        let p = VectorProvider::parse_table("cat 1 0 0\ndog 0 1 0\n", 3).unwrap();
        assert_eq!(word_vector("cat", &p), vec![1.0, 0.0, 0.0]);
        assert_eq!(word_vector("bird", &p), hash_unit_vector("bird", 3));
        assert!(VectorProvider::parse_table("cat 1 0\n", 3).is_err());
        assert!(VectorProvider::parse_table("cat 1 x 0\n", 3).is_err());
    }

    #[test]
    fn multi_word_is_mean() {
        let p = VectorProvider::hash(16);
        let a = word_vector("bernie", &p);
        let b = word_vector("sanders", &p);
        let m = word_vector("Bernie Sanders", &p);
        for i in 0..16 {
            assert!((m[i] - (a[i] + b[i]) / 2.0).abs() < 1e-15);
        }
    }
}
