//! The training recipe: two supervised fine-tuning stages (behavior, then
//! self-awareness) followed by one direct-preference-optimization stage
//! against a frozen reference. Only adapter tensors are updated; the base
//! model stays bitwise untouched.

pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, LoadedCheckpoint};
pub use gradcheck::{gradient_check, GradCheckReport, GradScope, LossKind};
pub use loss::{dpo_loss_from_logprobs, PairExample, SftExample};
pub use run::{preference_accuracy, train_dpo, train_sft, write_train_log, TrainLogLine, TrainRun};

use crate::lm::{LmError, Tensor};
use crate::util::Pcg;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

/// Which supervised stage a run belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SftStage {
    Behavior,
    Awareness,
}

/// Supervised fine-tuning settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftConfig {
    pub stage: SftStage,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_seq_len: usize,
}

impl SftConfig {
    pub fn new(stage: SftStage, seed: u64) -> Self {
        SftConfig {
            stage,
            learning_rate: 3e-4,
            steps: 300,
            batch_size: 8,
            seed,
            max_seq_len: 192,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.steps < 1 || self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("steps and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Direct-preference-optimization settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub max_seq_len: usize,
}

impl DpoConfig {
    pub fn new(seed: u64) -> Self {
        DpoConfig {
            beta: 0.1,
            learning_rate: 1e-4,
            steps: 150,
            batch_size: 4,
            seed,
            max_seq_len: 192,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.beta <= 0.0 {
            return Err(TrainError::InvalidConfig("beta must be positive".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        if self.steps < 1 || self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("steps and batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Adam hyperparameters fixed across the pipeline.
pub const ADAM_BETA1: f32 = 0.9;
pub const ADAM_BETA2: f32 = 0.999;
pub const ADAM_EPS: f32 = 1e-8;
/// Global gradient-norm clip applied before every update.
pub const GRAD_CLIP_NORM: f64 = 1.0;

/// Mutable training state: the unit of checkpointing. Optimizer moments are
/// keyed by adapter tensor graph-name; shapes always match their tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: usize,
    pub rng: Pcg,
    /// Current epoch's example order and the cursor into it.
    pub order: Vec<usize>,
    pub cursor: usize,
    pub moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)>,
    pub loss_history: Vec<f32>,
    pub margin_history: Vec<Option<f32>>,
}

impl TrainState {
    pub fn fresh(seed: u64) -> Self {
        TrainState {
            step: 0,
            rng: Pcg::new(seed),
            order: Vec::new(),
            cursor: 0,
            moments: BTreeMap::new(),
            loss_history: Vec::new(),
            margin_history: Vec::new(),
        }
    }
}

/// Errors from training runs and checkpoint I/O.
#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged (NaN/Inf) at step {step}")]
    DivergedLoss { step: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {reason}")]
    CorruptCheckpoint { reason: String },
    #[error("training needs at least one example")]
    EmptyDataset,
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint metadata: {0}")]
    Json(#[from] serde_json::Error),
}
