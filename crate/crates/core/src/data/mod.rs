//! Dataset samples, the JSONL format, modality caps, and the synthetic benchmark.

mod jsonl;
mod synth;

use crate::tokens::{ObjectRegion, SourceId, SpecialToken};

pub use jsonl::{load_dataset, parse_dataset, save_dataset, to_jsonl, LoadOptions};
pub use synth::{generate_synthetic, SynthConfig, SynthSplits, DEFAULT_TEMPLATES};

/// Default cap on special tokens per image.
pub const MAX_SPECIAL_TOKENS: usize = 50;
/// Default cap on object regions per image.
pub const MAX_OBJECTS: usize = 100;

/// One image's inputs and reference captions.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionSample {
    pub image_id: String,
    pub objects: Vec<ObjectRegion>,
    pub special_tokens: Vec<SpecialToken>,
    pub references: Vec<String>,
}

/// Face tokens first (in input order), then every other token (in input
/// order), truncated to `limit`.
pub fn cap_special_tokens(tokens: Vec<SpecialToken>, limit: usize) -> Vec<SpecialToken> {
    let (faces, rest): (Vec<_>, Vec<_>) = tokens.into_iter().partition(|t| t.source == SourceId::FACE);
    faces.into_iter().chain(rest).take(limit).collect()
}

/// Keeps the first `limit` regions.
pub fn cap_objects(mut regions: Vec<ObjectRegion>, limit: usize) -> Vec<ObjectRegion> {
    regions.truncate(limit);
    regions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::BBox;

    fn tok(i: usize, src: SourceId) -> SpecialToken {
        SpecialToken::new(format!("t{i}"), src, BBox([0.0, 0.0, 0.1, 0.1]), vec![0.0])
    }

    fn region(i: usize) -> ObjectRegion {
        ObjectRegion {
            bbox: BBox([0.0, 0.0, 1.0, 1.0]),
            visual_feature: vec![i as f64],
        }
    }

    #[test]
    fn faces_first_under_limit() {
        let mut toks = Vec::new();
        for i in 0..20 {
            toks.push(tok(i, if i % 2 == 0 { SourceId::OCR } else { SourceId::FACE }));
        }
        let out = cap_special_tokens(toks, MAX_SPECIAL_TOKENS);
        assert_eq!(out.len(), 20);
        assert!(out[..10].iter().all(|t| t.source == SourceId::FACE));
        assert!(out[10..].iter().all(|t| t.source == SourceId::OCR));
        assert_eq!(out[0].text, "t1");
        assert_eq!(out[10].text, "t0");
    }

    #[test]
    fn twenty_faces_forty_ocr() {
        let mut toks: Vec<_> = (0..40).map(|i| tok(i, SourceId::OCR)).collect();
        toks.extend((40..60).map(|i| tok(i, SourceId::FACE)));
        let out = cap_special_tokens(toks, 50);
        assert_eq!(out.len(), 50);
        assert_eq!(out.iter().filter(|t| t.source == SourceId::FACE).count(), 20);
        let ocr: Vec<_> = out.iter().filter(|t| t.source == SourceId::OCR).map(|t| t.text.clone()).collect();
        assert_eq!(ocr, (0..30).map(|i| format!("t{i}")).collect::<Vec<_>>());
    }

    #[test]
    fn face_overflow_keeps_first_faces() {
        let toks: Vec<_> = (0..55).map(|i| tok(i, SourceId::FACE)).collect();
        let out = cap_special_tokens(toks, 50);
        assert_eq!(out.len(), 50);
        assert_eq!(out.last().unwrap().text, "t49");
    }

    #[test]
    fn no_tokens() {
        assert!(cap_special_tokens(Vec::new(), 50).is_empty());
    }

    #[test]
    fn object_caps() {
        assert_eq!(cap_objects((0..30).map(region).collect(), MAX_OBJECTS).len(), 30);
        let out = cap_objects((0..130).map(region).collect(), MAX_OBJECTS);
        assert_eq!(out.len(), 100);
        assert_eq!(out[99].visual_feature, vec![99.0]);
        assert!(cap_objects(Vec::new(), MAX_OBJECTS).is_empty());
    }
}
