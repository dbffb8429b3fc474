//! Language side of the pipeline: tokenizer, prompt templates, the
//! decoder-only causal LM with adaptable linear layers, and decoding
//! strategies.

pub mod generate;
pub mod lm;
pub mod lora;
pub mod templates;
pub mod vocab;

pub use generate::{generate, GenerationConfig, Strategy};
pub use lm::{DecoderLm, LmConfig, TokenSequence};
pub use lora::{AdaptedLinear, LoraPair};
pub use templates::{PromptTemplate, TaskKind};
pub use vocab::{Vocabulary, BOS, EOS, PAD};
