//! Copy diagnostics and embedding-space source separation.

use crate::error::{Error, Result};
use crate::tokens::{SourceId, SpecialToken, WordChoice};
use crate::training::GoldSlot;

/// One generated caption with the tokens it could copy from and the copy
/// slots its reference expects.
#[derive(Debug, Clone, Copy)]
pub struct CopyCase<'a> {
    pub tokens: &'a [SpecialToken],
    pub choices: &'a [WordChoice],
    pub gold: &'a [GoldSlot],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CopyDiagnostics {
    /// Face slots whose aligned pointer copies a face token with the gold text.
    pub face_copy_rate: f64,
    /// OCR slots whose aligned pointer copies an OCR token with the gold text.
    pub ocr_copy_rate: f64,
    /// Slots whose aligned pointer copies a token of another source.
    pub wrong_source_rate: f64,
    pub face_slots: usize,
    pub ocr_slots: usize,
}

/// The k-th gold slot of a caption is aligned with its k-th pointer choice;
/// a slot without a pointer counts as not copied. Rates over zero slots are 0.
pub fn copy_diagnostics(cases: &[CopyCase<'_>]) -> CopyDiagnostics {
    let (mut face, mut face_ok, mut ocr, mut ocr_ok, mut wrong) = (0usize, 0usize, 0usize, 0usize, 0usize);
    for case in cases {
        let pointers: Vec<&SpecialToken> = case
            .choices
            .iter()
            .filter_map(|c| match c {
                WordChoice::Pointer(j) => case.tokens.get(*j),
                WordChoice::Vocab(_) => None,
            })
            .collect();
        for (k, slot) in case.gold.iter().enumerate() {
            let is_face = slot.source == SourceId::FACE;
            if is_face {
                face += 1;
            } else {
                ocr += 1;
            }
            let Some(tok) = pointers.get(k) else { continue };
            if tok.source != slot.source {
                wrong += 1;
            } else if tok.normalized_text() == slot.text {
                if is_face {
                    face_ok += 1;
                } else {
                    ocr_ok += 1;
                }
            }
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    CopyDiagnostics {
        face_copy_rate: rate(face_ok, face),
        ocr_copy_rate: rate(ocr_ok, ocr),
        wrong_source_rate: rate(wrong, face + ocr),
        face_slots: face,
        ocr_slots: ocr,
    }
}

/// Mean silhouette coefficient under Euclidean distance, clusters given by labels.
pub fn source_separation(points: &[(Vec<f64>, usize)]) -> Result<f64> {
    let mut labels: Vec<usize> = points.iter().map(|p| p.1).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Err(Error::DegenerateClusters("need at least two labels".into()));
    }
    let sizes: Vec<usize> = labels.iter().map(|l| points.iter().filter(|p| p.1 == *l).count()).collect();
    if sizes.iter().any(|&s| s < 2) {
        return Err(Error::DegenerateClusters("every label needs at least two points".into()));
    }
    let dim = points[0].0.len();
    if points.iter().any(|p| p.0.len() != dim) {
        return Err(Error::dim("source_separation", dim, points.iter().map(|p| p.0.len()).find(|&l| l != dim).unwrap()));
    }
    if points.iter().all(|p| p.0 == points[0].0) {
        return Err(Error::DegenerateClusters("all points are identical".into()));
    }
    let cluster_of = |l: usize| labels.binary_search(&l).unwrap();
    let n = points.len();
    let mut total = 0.0;
    for i in 0..n {
        let mut sums = vec![0.0; labels.len()];
        for j in 0..n {
            if i != j {
                let d: f64 = points[i].0.iter().zip(&points[j].0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                sums[cluster_of(points[j].1)] += d;
            }
        }
        let own = cluster_of(points[i].1);
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..labels.len())
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        total += if m > 0.0 { (b - a) / m } else { 0.0 };
    }
    Ok(total / n as f64)
}
