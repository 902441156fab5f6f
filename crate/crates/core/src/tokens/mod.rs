//! Token, region and vocabulary types, plus the text encoders used for
//! special-token features.

mod phoc;
mod wordvec;

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use phoc::{phoc_bigrams, phoc_encode, PHOC_BIGRAM_LEVEL, PHOC_DIM, PHOC_LEVELS, PHOC_UNIGRAMS};
pub use wordvec::{hash_unit_vector, word_vector, VectorProvider};

/// Identifier of the upstream classifier that produced a special token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SourceId(pub usize);

impl SourceId {
    pub const FACE: SourceId = SourceId(0);
    pub const OCR: SourceId = SourceId(1);

    pub fn name(self) -> String {
        match self {
            SourceId::FACE => "face".to_string(),
            SourceId::OCR => "ocr".to_string(),
            SourceId(k) => format!("source{k}"),
        }
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Normalized box `(x1, y1, x2, y2)` in image-relative coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BBox(pub [f64; 4]);

impl BBox {
    pub fn validate(&self) -> Result<()> {
        let [x1, y1, x2, y2] = self.0;
        let ok = self.0.iter().all(|v| v.is_finite())
            && (0.0..=1.0).contains(&x1)
            && (0.0..=1.0).contains(&y1)
            && x1 <= x2
            && y1 <= y2
            && x2 <= 1.0
            && y2 <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidValue {
                field: "bbox".into(),
                reason: format!("{:?} not within 0 <= x1 <= x2 <= 1, 0 <= y1 <= y2 <= 1", self.0),
            })
        }
    }

    pub fn area(&self) -> f64 {
        let [x1, y1, x2, y2] = self.0;
        (x2 - x1) * (y2 - y1)
    }
}

/// One upstream-classifier detection available for copying.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecialToken {
    pub text: String,
    pub source: SourceId,
    pub bbox: BBox,
    pub visual_feature: Vec<f64>,
}

impl SpecialToken {
    pub fn new(text: impl Into<String>, source: SourceId, bbox: BBox, visual_feature: Vec<f64>) -> Self {
        Self {
            text: text.into(),
            source,
            bbox,
            visual_feature,
        }
    }

    pub fn normalized_text(&self) -> String {
        normalize_token_text(&self.text)
    }

    pub fn validate(&self, num_sources: usize) -> Result<()> {
        if self.normalized_text().is_empty() {
            return Err(Error::EmptyWord(self.text.clone()));
        }
        if self.source.0 >= num_sources {
            return Err(Error::IndexOutOfRange {
                context: "special token source",
                index: self.source.0,
                len: num_sources,
            });
        }
        self.bbox.validate()
    }
}

/// A generic detected region: appearance feature plus box.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectRegion {
    pub bbox: BBox,
    pub visual_feature: Vec<f64>,
}

/// Decoder output at one step: a fixed-vocabulary word or a copied special token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WordChoice {
    Vocab(usize),
    Pointer(usize),
}

impl WordChoice {
    pub fn kind(&self) -> &'static str {
        match self {
            WordChoice::Vocab(_) => "vocab",
            WordChoice::Pointer(_) => "pointer",
        }
    }

    pub fn index(&self) -> usize {
        match *self {
            WordChoice::Vocab(i) | WordChoice::Pointer(i) => i,
        }
    }
}

/// Fixed output vocabulary. Indices 0..4 hold the reserved markers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const BEGIN: usize = 0;
    pub const END: usize = 1;
    pub const PAD: usize = 2;
    pub const UNK: usize = 3;
    pub const RESERVED: [&'static str; 4] = ["<begin>", "<end>", "<pad>", "<unk>"];

    /// Reserved markers followed by `words` in order, skipping duplicates.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocabulary {
            words: Vec::new(),
            index: HashMap::new(),
        };
        for w in Self::RESERVED {
            v.push(w);
        }
        for w in words {
            v.push(w.as_ref());
        }
        v
    }

    /// Rebuilds from a full word list that must start with the reserved markers.
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        if words.len() < 4 || words[..4].iter().zip(Self::RESERVED).any(|(a, b)| a != b) {
            return Err(Error::InvalidValue {
                field: "vocabulary".into(),
                reason: "must start with <begin> <end> <pad> <unk>".into(),
            });
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(Error::InvalidValue {
                    field: "vocabulary".into(),
                    reason: format!("duplicate word {w:?}"),
                });
            }
        }
        Ok(Self { words, index })
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.words.len());
            self.words.push(w.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }
}

/// Lowercases, keeps `[a-z0-9]` and spaces, collapses whitespace, trims.
pub fn normalize_token_text(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for ch in text.chars() {
        let c = ch.to_ascii_lowercase();
        if c.is_ascii_lowercase() || c.is_ascii_digit() {
            out.push(c);
        } else if c.is_whitespace() {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_token_text("Bernie  Sanders!"), "bernie sanders");
        assert_eq!(normalize_token_text("THIS WEEK"), "this week");
        assert_eq!(normalize_token_text("---"), "");
        assert_eq!(normalize_token_text("  tab\tand\nnewline "), "tab and newline");
    }

    #[test]
    fn vocabulary_reserved_and_lookup() {
        let v = Vocabulary::new(["a", "sign", "a"]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.word(Vocabulary::BEGIN), Some("<begin>"));
        assert_eq!(v.word(Vocabulary::END), Some("<end>"));
        assert_eq!(v.word(Vocabulary::PAD), Some("<pad>"));
        assert_eq!(v.word(Vocabulary::UNK), Some("<unk>"));
        for (i, w) in v.words().iter().enumerate() {
            assert_eq!(v.index_of(w), Some(i));
        }
        assert!(Vocabulary::from_words(vec!["a".into()]).is_err());
        let dup = vec!["<begin>", "<end>", "<pad>", "<unk>", "x", "x"];
        assert!(Vocabulary::from_words(dup.into_iter().map(String::from).collect()).is_err());
    }

    #[test]
    fn bbox_bounds() {
        assert!(BBox([0.0, 0.0, 1.0, 1.0]).validate().is_ok());
        assert!(BBox([0.5, 0.0, 0.4, 1.0]).validate().is_err());
        assert!(BBox([0.0, 0.0, 1.2, 1.0]).validate().is_err());
        assert!(BBox([-0.1, 0.0, 0.2, 1.0]).validate().is_err());
    }

    #[test]
    fn token_validation() {
        let t = SpecialToken::new("!!", SourceId::FACE, BBox([0.0, 0.0, 0.1, 0.1]), vec![]);
        assert!(matches!(t.validate(2), Err(Error::EmptyWord(_))));
        let t = SpecialToken::new("x", SourceId(2), BBox([0.0, 0.0, 0.1, 0.1]), vec![]);
        assert!(matches!(t.validate(2), Err(Error::IndexOutOfRange { .. })));
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "\\PC{0,40}") {
            let once = normalize_token_text(&s);
            prop_assert_eq!(normalize_token_text(&once), once.clone());
            prop_assert!(once.chars().all(|c| c == ' ' || c.is_ascii_lowercase() || c.is_ascii_digit()));
        }
    }
}
