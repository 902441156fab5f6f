//! CIDEr-D: tf-idf n-gram cosine with clipping and a Gaussian length penalty.

use std::collections::{HashMap, HashSet};

use super::text::{ngram_counts, tokenize};
use crate::error::{Error, Result};

pub const CIDER_SIGMA: f64 = 6.0;
pub const CIDER_SCALE: f64 = 10.0;

struct Vectors {
    /// Per n: n-gram -> tf * idf.
    vec: Vec<HashMap<Vec<String>, f64>>,
    norm: [f64; 4],
    len: usize,
}

fn vectorize(words: &[String], df: &HashMap<Vec<String>, usize>, log_n: f64) -> Vectors {
    let mut vec = Vec::with_capacity(4);
    let mut norm = [0.0; 4];
    for n in 1..=4 {
        let mut m: HashMap<Vec<String>, f64> = HashMap::new();
        for (g, tf) in ngram_counts(words, n) {
            let d = df.get(g).copied().unwrap_or(0).max(1) as f64;
            m.insert(g.to_vec(), tf as f64 * (log_n - d.ln()));
        }
        // Sorted summation keeps the norm independent of hash order.
        let mut sq: Vec<f64> = m.values().map(|v| v * v).collect();
        sq.sort_by(f64::total_cmp);
        norm[n - 1] = sq.iter().sum::<f64>().sqrt();
        vec.push(m);
    }
    Vectors { vec, norm, len: words.len() }
}

fn similarity(hyp: &Vectors, r: &Vectors) -> [f64; 4] {
    let delta = hyp.len as f64 - r.len as f64;
    let penalty = (-(delta * delta) / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    let mut out = [0.0; 4];
    for n in 0..4 {
        let mut terms: Vec<f64> = hyp.vec[n]
            .iter()
            .filter_map(|(g, &vh)| r.vec[n].get(g).map(|&vr| vh.min(vr) * vr))
            .collect();
        terms.sort_by(f64::total_cmp);
        let dot: f64 = terms.iter().sum();
        if hyp.norm[n] != 0.0 && r.norm[n] != 0.0 {
            out[n] = dot / (hyp.norm[n] * r.norm[n]) * penalty;
        }
    }
    out
}

/// Per-image CIDEr-D scores; document frequencies come from the reference
/// sets of all images in the call.
pub fn cider_per_image(candidates: &[String], references: &[Vec<String>]) -> Result<Vec<f64>> {
    if candidates.len() != references.len() {
        return Err(Error::dim("cider", references.len(), candidates.len()));
    }
    if candidates.len() < 2 {
        return Err(Error::CorpusTooSmall(candidates.len()));
    }
    if references.iter().any(Vec::is_empty) {
        return Err(Error::EmptyReferenceSet);
    }
    let refs: Vec<Vec<Vec<String>>> = references.iter().map(|rs| rs.iter().map(|r| tokenize(r)).collect()).collect();
    let mut df: HashMap<Vec<String>, usize> = HashMap::new();
    for rs in &refs {
        let mut seen: HashSet<&[String]> = HashSet::new();
        for r in rs {
            for n in 1..=4 {
                seen.extend(ngram_counts(r, n).into_keys());
            }
        }
        for g in seen {
            *df.entry(g.to_vec()).or_insert(0) += 1;
        }
    }
    let log_n = (candidates.len() as f64).ln();
    let mut scores = Vec::with_capacity(candidates.len());
    for (c, rs) in candidates.iter().zip(&refs) {
        let hyp = vectorize(&tokenize(c), &df, log_n);
        let mut acc = [0.0; 4];
        for r in rs {
            let sim = similarity(&hyp, &vectorize(r, &df, log_n));
            for n in 0..4 {
                acc[n] += sim[n];
            }
        }
        let mean_n: f64 = acc.iter().sum::<f64>() / 4.0;
        scores.push(mean_n / rs.len() as f64 * CIDER_SCALE);
    }
    Ok(scores)
}

/// Mean of [`cider_per_image`].
pub fn cider(candidates: &[String], references: &[Vec<String>]) -> Result<f64> {
    let s = cider_per_image(candidates, references)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}
