//! A small from-scratch autoregressive transformer.
//!
//! Byte-level tokenizer with attitude marker tokens, pre-norm transformer
//! blocks, reverse-mode autodiff, and low-rank adapters that can be
//! attached, swapped, and merged. Everything is deterministic given the
//! configured seed.

pub mod checkpoint;
pub mod config;
pub mod generate;
pub mod graph;
pub mod lora;
pub mod model;
pub mod params;
pub mod scalar;
pub mod tensor;
pub mod tokenizer;

pub use config::ModelConfig;
pub use generate::{generate, Decode};
pub use lora::{merge_adapter, LoraAdapter, ModelView};
pub use model::{forward, sequence_logprob, ForwardOutput};
pub use params::ParameterStore;
pub use scalar::Scalar;
pub use tensor::{Tensor, Trans};
pub use tokenizer::Vocabulary;

use thiserror::Error;

/// Errors from model construction, forward passes, and checkpoint I/O.
#[derive(Debug, Error)]
pub enum LmError {
    #[error("invalid model config: {reason}")]
    InvalidConfig { reason: String },
    #[error("sequence of {len} tokens exceeds context length {context_len}")]
    ContextOverflow { len: usize, context_len: usize },
    #[error("shape mismatch for {name}: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("corrupt checkpoint: {reason}")]
    CorruptCheckpoint { reason: String },
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
}
