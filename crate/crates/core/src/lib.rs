//! Desk-scale toolkit for building MBTI-conditioned language models.
//!
//! The pipeline runs end to end on a laptop: construct behavior,
//! self-awareness, and preference datasets from an instruction corpus;
//! fine-tune a small from-scratch transformer in two supervised stages plus
//! one direct-preference-optimization stage, with swappable low-rank
//! personality adapters; and score the result against a multiple-choice
//! personality questionnaire.
//!
//! Modules map one-to-one onto the pipeline stages:
//!
//! - [`mbti`] — dimensions, attitudes, and the sixteen type codes
//! - [`annotator`] — remote or deterministic mock text annotation
//! - [`dataset`] — dataset construction, selection, stats, validation
//! - [`lm`] — byte-level transformer with autodiff and LoRA adapters
//! - [`trainer`] — two-stage SFT plus DPO over adapter tensors
//! - [`eval`] — questionnaire administration and report emission

pub mod annotator;
pub mod assets;
pub mod dataset;
pub mod eval;
pub mod lm;
pub mod mbti;
pub mod prompt;
pub mod trainer;
pub mod util;
