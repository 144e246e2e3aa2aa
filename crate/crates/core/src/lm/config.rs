//! Model hyperparameters.

use super::tokenizer::Vocabulary;
use super::LmError;
use serde::{Deserialize, Serialize};

/// Architecture and initialization parameters for the toy transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub vocab: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    /// Desk-scale default: trains in minutes on a laptop.
    fn default() -> Self {
        ModelConfig {
            layers: 4,
            model_dim: 128,
            heads: 4,
            ff_dim: 512,
            context_len: 256,
            vocab: Vocabulary::SIZE,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// A deliberately tiny configuration for gradient checks and unit tests.
    pub fn tiny(seed: u64) -> Self {
        ModelConfig {
            layers: 1,
            model_dim: 16,
            heads: 2,
            ff_dim: 32,
            context_len: 32,
            vocab: Vocabulary::SIZE,
            seed,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<(), LmError> {
        let fail = |reason: &str| {
            Err(LmError::InvalidConfig {
                reason: reason.to_string(),
            })
        };
        if self.layers == 0 || self.model_dim == 0 || self.heads == 0 || self.ff_dim == 0 {
            return fail("layers, model_dim, heads and ff_dim must be positive");
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return fail("model_dim must be divisible by heads");
        }
        if self.context_len < 2 {
            return fail("context_len must be at least 2");
        }
        if self.vocab < Vocabulary::SIZE {
            return fail("vocab must cover the byte-level vocabulary");
        }
        Ok(())
    }
}
