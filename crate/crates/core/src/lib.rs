//! Image captioning with copyable special tokens.
//!
//! A multimodal transformer reads object regions, special tokens emitted by
//! upstream classifiers (face recognition, OCR, ...), and the caption prefix,
//! then at every step scores both a fixed vocabulary and a pointer to each
//! special token. Everything numeric is generic over [`Scalar`] (`f32` or
//! `f64`); the aliases below name the common instantiations.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod decoder;
pub mod embedding;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scalar;
pub mod tokens;
pub mod training;
pub mod transformer;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use data::CaptionSample;
pub use decoder::{generate_caption, select_word, Generation, StepScores};
pub use model::{HeadInit, Model, ModelConfig, ModelParams};
pub use tokens::{BBox, ObjectRegion, SourceId, SpecialToken, VectorProvider, Vocabulary, WordChoice};
pub use training::{TrainConfig, TrainState};

pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type ModelParams32 = ModelParams<f32>;
pub type ModelParams64 = ModelParams<f64>;
pub type Matrix32 = linalg::Matrix<f32>;
pub type Matrix64 = linalg::Matrix<f64>;
pub type TrainState32 = TrainState<f32>;
pub type TrainState64 = TrainState<f64>;
