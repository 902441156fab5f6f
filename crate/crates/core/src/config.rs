//! Flat `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Only `seed` is
//! required; every other key has a default (see [`KEYS`]).

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::data::SynthConfig;
use crate::error::{Error, Result};
use crate::model::{HeadInit, ModelConfig};
use crate::training::{Precision, TrainConfig};

/// Every recognized key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for data generation, initialization, and shuffling (required)"),
    ("samples", "synthetic training+test samples"),
    ("test_fraction", "share of synthetic samples placed in the test split"),
    ("zero_shot_samples", "synthetic samples whose subject is a held-out name"),
    ("name_lexicon", "distinct synthetic person names"),
    ("text_lexicon", "distinct synthetic scene-text strings"),
    ("holdout_fraction", "share of names reserved for the zero-shot split"),
    ("noise", "std of Gaussian noise on synthetic features and boxes"),
    ("distractor_faces", "non-subject face tokens per synthetic image"),
    ("distractor_texts", "non-subject OCR tokens per synthetic image"),
    ("extra_objects", "filler object regions per synthetic image"),
    ("d_model", "transformer width"),
    ("layers", "transformer layers"),
    ("heads", "attention heads"),
    ("d_ffn", "feed-forward hidden width"),
    ("d_pointer", "pointer projection width"),
    ("d_fr", "visual feature width of objects and special tokens"),
    ("d_ft", "word-vector width"),
    ("num_sources", "number of special-token sources"),
    ("t_max", "maximum decoding steps"),
    ("dropout", "dropout probability during training"),
    ("head_init", "output head initialization: random or zero"),
    ("word_vectors", "optional word-vector table (word followed by d_ft floats per line)"),
    ("vocab_min_count", "minimum reference count for a vocabulary word"),
    ("batch_size", "minibatch size"),
    ("learning_rate", "Adam learning rate"),
    ("lr_decay", "learning-rate multiplier applied at each milestone"),
    ("milestones", "comma-separated optimizer steps for decay (default 70%,90% of total)"),
    ("epochs", "training epochs"),
    ("precision", "f32 or f64"),
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if !KEYS.iter().any(|(name, _)| *name == k) {
                return Err(Error::Config(format!("line {}: unknown key `{k}`", i + 1)));
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Overrides (or adds) a value, e.g. from a command-line flag.
    pub fn set(&mut self, key: &str, value: impl ToString) -> Result<()> {
        if !KEYS.iter().any(|(name, _)| *name == key) {
            return Err(Error::Config(format!("unknown key `{key}`")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        match self.raw(key) {
            Some(_) => self.get_or(key, None::<T>).map(|v| v.unwrap()),
            None => Err(Error::MissingKey(key.to_string())),
        }
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        self.get_or(key, Some(default)).map(|v| v.unwrap())
    }

    fn get_or<T: FromStr>(&self, key: &str, default: Option<T>) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map(Some).map_err(|_| Error::InvalidValue {
                field: key.to_string(),
                reason: format!("cannot parse {v:?}"),
            }),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.require("seed")
    }

    pub fn synth(&self) -> Result<SynthConfig> {
        let d = SynthConfig::default();
        let cfg = SynthConfig {
            seed: self.seed()?,
            samples: self.get("samples", d.samples)?,
            test_fraction: self.get("test_fraction", d.test_fraction)?,
            zero_shot_samples: self.get("zero_shot_samples", d.zero_shot_samples)?,
            name_lexicon: self.get("name_lexicon", d.name_lexicon)?,
            text_lexicon: self.get("text_lexicon", d.text_lexicon)?,
            holdout_fraction: self.get("holdout_fraction", d.holdout_fraction)?,
            templates: d.templates,
            d_fr: self.get("d_fr", d.d_fr)?,
            noise: self.get("noise", d.noise)?,
            distractor_faces: self.get("distractor_faces", d.distractor_faces)?,
            distractor_texts: self.get("distractor_texts", d.distractor_texts)?,
            extra_objects: self.get("extra_objects", d.extra_objects)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn model(&self) -> Result<ModelConfig> {
        let d = ModelConfig::default();
        let d_model = self.get("d_model", d.d_model)?;
        let cfg = ModelConfig {
            d_model,
            layers: self.get("layers", d.layers)?,
            heads: self.get("heads", d.heads)?,
            d_ffn: self.get("d_ffn", 4 * d_model)?,
            d_pointer: self.get("d_pointer", d_model)?,
            d_fr: self.get("d_fr", d.d_fr)?,
            d_ft: self.get("d_ft", d.d_ft)?,
            num_sources: self.get("num_sources", d.num_sources)?,
            t_max: self.get("t_max", d.t_max)?,
            dropout: self.get("dropout", d.dropout)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn head_init(&self) -> Result<HeadInit> {
        match self.raw("head_init").unwrap_or("random") {
            "random" => Ok(HeadInit::Random),
            "zero" => Ok(HeadInit::Zero),
            other => Err(Error::InvalidValue {
                field: "head_init".into(),
                reason: format!("expected random or zero, got {other:?}"),
            }),
        }
    }

    pub fn train(&self) -> Result<TrainConfig> {
        let d = TrainConfig::default();
        let milestones = match self.raw("milestones") {
            None | Some("") => None,
            Some(list) => Some(
                list.split(',')
                    .map(|s| {
                        s.trim().parse::<usize>().map_err(|_| Error::InvalidValue {
                            field: "milestones".into(),
                            reason: format!("cannot parse {s:?}"),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            ),
        };
        let cfg = TrainConfig {
            batch_size: self.get("batch_size", d.batch_size)?,
            learning_rate: self.get("learning_rate", d.learning_rate)?,
            lr_decay: self.get("lr_decay", d.lr_decay)?,
            milestones,
            epochs: self.get("epochs", d.epochs)?,
            seed: self.seed()?,
            precision: Precision::parse(self.raw("precision").unwrap_or("f32"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_defaults() {
        let c = Config::parse("# comment\nseed = 7\n\nd_model=32\nheads = 4\nmilestones = 10, 20\n").unwrap();
        assert_eq!(c.seed().unwrap(), 7);
        let m = c.model().unwrap();
        assert_eq!((m.d_model, m.heads, m.d_ffn, m.d_pointer), (32, 4, 128, 32));
        let t = c.train().unwrap();
        assert_eq!(t.milestones, Some(vec![10, 20]));
        assert_eq!(t.batch_size, 128);
    }

    #[test]
    fn missing_seed_is_named() {
        let e = Config::parse("samples = 3").unwrap().synth().unwrap_err();
        assert!(matches!(&e, Error::MissingKey(k) if k == "seed"));
        assert!(e.is_config());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Config::parse("nonsense").unwrap_err().is_config());
        assert!(Config::parse("color = red").unwrap_err().is_config());
        let e = Config::parse("seed = x").unwrap().seed().unwrap_err();
        assert!(e.is_config());
        assert!(Config::parse("seed=1\nhead_init=maybe").unwrap().head_init().is_err());
    }

    #[test]
    fn flags_override() {
        let mut c = Config::parse("seed = 1\nepochs = 3").unwrap();
        c.set("epochs", 9).unwrap();
        assert_eq!(c.train().unwrap().epochs, 9);
        assert!(c.set("bogus", 1).is_err());
    }
}
