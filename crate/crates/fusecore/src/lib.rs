//! A small video reasoning pipeline built from first principles: a dense
//! f64 autodiff engine, a patch-based video encoder, a query-token fusion
//! module that compresses visual features into a fixed budget of
//! language-space embeddings, a decoder-only language model with LoRA
//! adapters, a two-stage training loop, a deterministic synthetic video
//! corpus, and text-generation evaluation metrics.

pub mod config;
pub mod datasynth;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod nn;
pub mod perception;
pub mod pipeline;
pub mod reasoner;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{FuseError, Result};
pub use pipeline::{Pipeline, ModelDims};
