//! Deterministic synthetic captioning benchmark.
//!
//! Every image has one salient face (the subject) and, depending on the
//! caption template, one salient piece of scene text. Small peripheral
//! distractor tokens of both sources are mixed in. A full-frame "scene"
//! object carries the template identity, so the caption wording is
//! recoverable from the inputs. Visual features are hashed unit vectors of
//! the entity identity plus Gaussian noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::CaptionSample;
use crate::error::{Error, Result};
use crate::tokens::{hash_unit_vector, normalize_token_text, BBox, ObjectRegion, SourceId, SpecialToken};

pub const DEFAULT_TEMPLATES: [&str; 5] = [
    "{NAME} standing next to a sign that says {TEXT}",
    "{NAME} holding a banner with the word {TEXT}",
    "a photo of {NAME} smiling at the camera",
    "{NAME} speaking in front of a screen that reads {TEXT}",
    "a close up of {NAME} wearing a shirt that says {TEXT}",
];

const NAME_SYLLABLES: [&str; 12] = ["ka", "lo", "mi", "ren", "tu", "sa", "vi", "do", "ne", "ra", "jo", "bel"];
const TEXT_SYLLABLES: [&str; 12] = ["zup", "gex", "quo", "fyn", "wex", "kiz", "pox", "yul", "hax", "vog", "zim", "qua"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    /// Size of the seen-name pool split into train and test.
    pub samples: usize,
    pub test_fraction: f64,
    pub zero_shot_samples: usize,
    pub name_lexicon: usize,
    pub text_lexicon: usize,
    pub holdout_fraction: f64,
    pub templates: Vec<String>,
    pub d_fr: usize,
    pub noise: f64,
    pub distractor_faces: usize,
    pub distractor_texts: usize,
    pub extra_objects: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            samples: 100,
            test_fraction: 0.2,
            zero_shot_samples: 50,
            name_lexicon: 40,
            text_lexicon: 30,
            holdout_fraction: 0.25,
            templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
            d_fr: 16,
            noise: 0.05,
            distractor_faces: 1,
            distractor_texts: 1,
            extra_objects: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplits {
    pub train: Vec<CaptionSample>,
    pub test: Vec<CaptionSample>,
    pub zero_shot: Vec<CaptionSample>,
    pub train_names: Vec<String>,
    pub holdout_names: Vec<String>,
}

impl SynthConfig {
    pub fn holdout_count(&self) -> usize {
        (self.holdout_fraction * self.name_lexicon as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return err(format!("holdout_fraction {} not in [0, 1)", self.holdout_fraction));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return err(format!("test_fraction {} not in [0, 1)", self.test_fraction));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return err(format!("noise {} must be a finite value >= 0", self.noise));
        }
        if self.d_fr == 0 {
            return err("d_fr must be positive".into());
        }
        let held = self.holdout_count();
        if held >= self.name_lexicon {
            return err(format!("holdout of {held} names leaves no training names out of {}", self.name_lexicon));
        }
        if self.name_lexicon - held < 1 + self.distractor_faces {
            return err("too few training names for the requested distractor faces".into());
        }
        if self.zero_shot_samples > 0 && held < 1 + self.distractor_faces {
            return err("too few held-out names for the zero-shot split".into());
        }
        if self.text_lexicon < 1 + self.distractor_texts {
            return err("text_lexicon too small for the requested distractor texts".into());
        }
        if self.name_lexicon > NAME_SYLLABLES.len().pow(4) || self.text_lexicon > TEXT_SYLLABLES.len().pow(2) {
            return err("lexicon larger than the syllable inventory supports".into());
        }
        if self.templates.len() < 4 {
            return err(format!("need at least 4 templates, got {}", self.templates.len()));
        }
        for t in &self.templates {
            if t.matches("{NAME}").count() != 1 || t.matches("{TEXT}").count() > 1 {
                return err(format!("template {t:?} needs exactly one {{NAME}} and at most one {{TEXT}}"));
            }
        }
        Ok(())
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}

fn lexicons(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> (Vec<String>, Vec<String>) {
    let mut firsts: Vec<String> = Vec::new();
    for a in NAME_SYLLABLES {
        for b in NAME_SYLLABLES {
            firsts.push(format!("{a}{b}"));
        }
    }
    let mut names = Vec::with_capacity(firsts.len() * firsts.len());
    for f in &firsts {
        for l in &firsts {
            if f != l {
                names.push(format!("{} {}", capitalize(f), capitalize(l)));
            }
        }
    }
    names.shuffle(rng);
    names.truncate(cfg.name_lexicon);

    let mut texts = Vec::new();
    for a in TEXT_SYLLABLES {
        for b in TEXT_SYLLABLES {
            if a != b {
                texts.push(format!("{a}{b}").to_uppercase());
            }
        }
    }
    texts.shuffle(rng);
    texts.truncate(cfg.text_lexicon);
    (names, texts)
}

fn noisy_feature(key: &str, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let base = hash_unit_vector(key, cfg.d_fr);
    if cfg.noise == 0.0 {
        return base;
    }
    let n = Normal::new(0.0, cfg.noise).expect("valid sigma");
    base.into_iter().map(|x| x + n.sample(rng)).collect()
}

fn rbox(rng: &mut ChaCha8Rng, x: (f64, f64), y: (f64, f64), w: (f64, f64), h: (f64, f64)) -> BBox {
    let x1 = rng.random_range(x.0..x.1);
    let y1 = rng.random_range(y.0..y.1);
    let x2 = (x1 + rng.random_range(w.0..w.1)).min(1.0);
    let y2 = (y1 + rng.random_range(h.0..h.1)).min(1.0);
    BBox([x1, y1, x2, y2])
}

fn pick_distinct<'a>(pool: &'a [String], count: usize, exclude: &str, rng: &mut ChaCha8Rng) -> Vec<&'a String> {
    let mut c: Vec<&String> = pool.iter().filter(|s| s.as_str() != exclude).collect();
    c.shuffle(rng);
    c.truncate(count);
    c
}

fn make_sample(
    image_id: String,
    names: &[String],
    texts: &[String],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> CaptionSample {
    let tpl_idx = rng.random_range(0..cfg.templates.len());
    let template = &cfg.templates[tpl_idx];
    let name = &names[rng.random_range(0..names.len())];
    let text = &texts[rng.random_range(0..texts.len())];
    let uses_text = template.contains("{TEXT}");

    let mut objects = vec![ObjectRegion {
        bbox: BBox([0.0, 0.0, 1.0, 1.0]),
        visual_feature: noisy_feature(&format!("scene:{tpl_idx}"), cfg, rng),
    }];
    for _ in 0..cfg.extra_objects {
        let class = rng.random_range(0..8);
        let bbox = rbox(rng, (0.0, 0.7), (0.0, 0.7), (0.1, 0.3), (0.1, 0.3));
        objects.push(ObjectRegion {
            bbox,
            visual_feature: noisy_feature(&format!("object:{class}"), cfg, rng),
        });
    }

    let mut tokens = Vec::new();
    let face_box = rbox(rng, (0.3, 0.4), (0.1, 0.2), (0.25, 0.35), (0.3, 0.4));
    tokens.push(SpecialToken::new(
        name.clone(),
        SourceId::FACE,
        face_box,
        noisy_feature(&format!("face:{}", normalize_token_text(name)), cfg, rng),
    ));
    for other in pick_distinct(names, cfg.distractor_faces, name, rng) {
        let bbox = rbox(rng, (0.78, 0.9), (0.05, 0.85), (0.04, 0.08), (0.05, 0.1));
        tokens.push(SpecialToken::new(
            other.clone(),
            SourceId::FACE,
            bbox,
            noisy_feature(&format!("face:{}", normalize_token_text(other)), cfg, rng),
        ));
    }
    if uses_text {
        let bbox = rbox(rng, (0.1, 0.3), (0.6, 0.7), (0.3, 0.5), (0.1, 0.2));
        tokens.push(SpecialToken::new(
            text.clone(),
            SourceId::OCR,
            bbox,
            noisy_feature(&format!("text:{}", normalize_token_text(text)), cfg, rng),
        ));
    }
    for other in pick_distinct(texts, cfg.distractor_texts, text, rng) {
        let bbox = rbox(rng, (0.02, 0.15), (0.05, 0.5), (0.03, 0.06), (0.02, 0.04));
        tokens.push(SpecialToken::new(
            other.clone(),
            SourceId::OCR,
            bbox,
            noisy_feature(&format!("text:{}", normalize_token_text(other)), cfg, rng),
        ));
    }
    tokens.shuffle(rng);

    let reference = template
        .replace("{NAME}", &normalize_token_text(name))
        .replace("{TEXT}", &normalize_token_text(text));
    CaptionSample {
        image_id,
        objects,
        special_tokens: tokens,
        references: vec![reference],
    }
}

/// Train/test samples over seen names, plus a zero-shot split whose names never occur in training.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthSplits> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (names, texts) = lexicons(cfg, &mut rng);
    let held = cfg.holdout_count();
    let (train_names, holdout_names) = names.split_at(names.len() - held);

    let n_test = (cfg.test_fraction * cfg.samples as f64).floor() as usize;
    let mut pool = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        pool.push(make_sample(format!("synth-{i:05}"), train_names, &texts, cfg, &mut rng));
    }
    let test = pool.split_off(cfg.samples - n_test);
    let zero_shot = (0..cfg.zero_shot_samples)
        .map(|i| make_sample(format!("synth-zs-{i:05}"), holdout_names, &texts, cfg, &mut rng))
        .collect();
    Ok(SynthSplits {
        train: pool,
        test,
        zero_shot,
        train_names: train_names.to_vec(),
        holdout_names: holdout_names.to_vec(),
    })
}
