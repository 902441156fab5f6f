//! Targets, loss, optimizer, and the training loop.

pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod targets;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::CaptionSample;
use crate::error::{Error, Result};
use crate::model::{EncodedSample, Model, ModelParams};
use crate::scalar::Scalar;
use crate::tokens::Vocabulary;

pub use gradcheck::{check_gradient, grad_check, relative_error, GradCheckReport, GroupError, GRAD_CHECK_EPSILON};
pub use loss::{bce_step, dbce_loss, dbce_loss_and_grad};
pub use optim::Adam;
pub use targets::{build_targets, build_targets_capped, gold_slots, match_spans, GoldSlot, Segment, TargetMatrix, Targets};

/// Floating-point precision used for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::InvalidValue {
                field: "precision".into(),
                reason: format!("expected f32 or f64, got {other:?}"),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::F32 => "f32",
            Self::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied at each milestone.
    pub lr_decay: f64,
    /// Optimizer steps at which the learning rate is decayed; `None` means
    /// 70% and 90% of the total step count.
    pub milestones: Option<Vec<usize>>,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            learning_rate: 1e-4,
            lr_decay: 0.1,
            milestones: None,
            epochs: 10,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: &str| {
            Err(Error::InvalidValue {
                field: field.into(),
                reason: reason.into(),
            })
        };
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be a positive finite number");
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return bad("lr_decay", "must be a positive finite number");
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self, examples: usize) -> usize {
        self.epochs * self.steps_per_epoch(examples)
    }

    pub fn resolved_milestones(&self, examples: usize) -> Vec<usize> {
        match &self.milestones {
            Some(m) => m.clone(),
            None => {
                let total = self.total_steps(examples) as f64;
                vec![(0.7 * total).round() as usize, (0.9 * total).round() as usize]
            }
        }
    }

    /// Learning rate for optimizer step `step` (0-based).
    pub fn learning_rate_at(&self, step: u64, examples: usize) -> f64 {
        let passed = self
            .resolved_milestones(examples)
            .iter()
            .filter(|&&m| step >= m as u64)
            .count();
        self.learning_rate * self.lr_decay.powi(passed as i32)
    }
}

/// Vocabulary of reference words that are not covered by a copied span,
/// keeping words seen at least `min_count` times.
pub fn build_vocabulary(samples: &[CaptionSample], min_count: usize) -> Vocabulary {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for s in samples {
        for r in &s.references {
            for seg in match_spans(r, &s.special_tokens) {
                if let Segment::Word(w) = seg {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
    }
    let mut words: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
    // Most frequent first, ties alphabetical.
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::new(words.into_iter().map(|(w, _)| w))
}

/// One (image, reference) pair ready for teacher forcing.
#[derive(Debug, Clone)]
pub struct Example<T> {
    pub sample: usize,
    pub encoded: EncodedSample<T>,
    pub targets: Targets,
}

/// Builds one example per reference of every sample.
pub fn prepare_examples<T: Scalar>(model: &Model<T>, samples: &[CaptionSample]) -> Result<Vec<Example<T>>> {
    let mut out = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let encoded = model.encode(&s.objects, &s.special_tokens)?;
        for r in &s.references {
            let targets = build_targets_capped(r, &model.vocab, &s.special_tokens, model.config.t_max)?;
            out.push(Example {
                sample: i,
                encoded: encoded.clone(),
                targets,
            });
        }
    }
    Ok(out)
}

/// Loss on one example; accumulates `scale * d loss / d params` into `grad`.
pub fn example_loss_and_grad<T: Scalar>(
    model: &Model<T>,
    ex: &Example<T>,
    grad: &mut ModelParams<T>,
    scale: T,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<T> {
    let (scores, cache) = model.forward_teacher(&ex.encoded, &ex.targets.inputs, dropout_rng)?;
    let (loss, mut d_scores) = dbce_loss_and_grad(&scores, &ex.targets.targets)?;
    d_scores.scale(scale);
    model.backward_teacher(&ex.encoded, &ex.targets.inputs, &cache, &d_scores, grad);
    Ok(loss)
}

/// Mean loss over `examples` without dropout.
pub fn dataset_loss<T: Scalar>(model: &Model<T>, examples: &[Example<T>]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let (scores, _) = model.forward_teacher(&ex.encoded, &ex.targets.inputs, None)?;
        total += dbce_loss(&scores, &ex.targets.targets)?.as_f64();
    }
    Ok(total / examples.len() as f64)
}

/// Fraction of examples whose every teacher-forced step puts its highest
/// score on a gold entry.
pub fn teacher_forced_accuracy<T: Scalar>(model: &Model<T>, examples: &[Example<T>]) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in examples {
        let (scores, _) = model.forward_teacher(&ex.encoded, &ex.targets.inputs, None)?;
        let ok = (0..scores.rows()).all(|t| {
            let row = scores.row(t);
            let best = argmax(row);
            ex.targets.targets.row(t).contains(&best)
        });
        hits += ok as usize;
    }
    Ok(hits as f64 / examples.len() as f64)
}

fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub optimizer: Adam<T>,
    /// Completed epochs.
    pub epoch: usize,
    /// Mean loss of each optimizer step's minibatch, in step order.
    pub loss_history: Vec<f64>,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: &Model<T>) -> Self {
        Self {
            optimizer: Adam::new(&model.params),
            epoch: 0,
            loss_history: Vec::new(),
        }
    }
}

/// Runs one epoch: a seeded shuffle, then one Adam step per minibatch on the
/// batch-mean gradient. Returns the epoch's mean loss.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    examples: &[Example<T>],
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
) -> Result<f64> {
    cfg.validate()?;
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let epoch_seed = cfg.seed.wrapping_add(state.epoch as u64);
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(epoch_seed ^ 0x5eed_d50f_0000_0000);
    let use_dropout = model.config.dropout > 0.0;

    let mut total = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let step = state.optimizer.step as usize;
        let mut grad = model.params.zeros_like();
        let scale = T::one() / T::from_usize(batch.len()).unwrap();
        let mut batch_loss = 0.0;
        for &i in batch {
            let rng = if use_dropout { Some(&mut dropout_rng) } else { None };
            let l = example_loss_and_grad(model, &examples[i], &mut grad, scale, rng)?.as_f64();
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    detail: format!("loss {l} on example {i}"),
                });
            }
            batch_loss += l;
        }
        total += batch_loss;
        state.loss_history.push(batch_loss / batch.len() as f64);
        if !grad.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "non-finite gradient".into(),
            });
        }
        let lr = cfg.learning_rate_at(step as u64, examples.len());
        state.optimizer.update(&mut model.params, &grad, lr);
        if !model.params.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "non-finite parameters after update".into(),
            });
        }
    }
    state.epoch += 1;
    Ok(if examples.is_empty() { 0.0 } else { total / examples.len() as f64 })
}

/// Trains until `state.epoch == cfg.epochs`.
pub fn train<T: Scalar>(
    model: &mut Model<T>,
    examples: &[Example<T>],
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
) -> Result<()> {
    train_until(model, examples, cfg, state, cfg.epochs)
}

/// Trains until `state.epoch == min(until_epoch, cfg.epochs)`. The learning-rate
/// schedule always follows the full `cfg.epochs` plan, so stopping early and
/// resuming later reproduces an uninterrupted run exactly.
pub fn train_until<T: Scalar>(
    model: &mut Model<T>,
    examples: &[Example<T>],
    cfg: &TrainConfig,
    state: &mut TrainState<T>,
    until_epoch: usize,
) -> Result<()> {
    while state.epoch < until_epoch.min(cfg.epochs) {
        train_epoch(model, examples, cfg, state)?;
    }
    Ok(())
}
