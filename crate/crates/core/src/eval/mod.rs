//! Questionnaire evaluation: administer a multiple-choice bank to a model
//! by option log-probability scoring and aggregate the four-letter verdict.

pub mod bank;
pub mod report;
pub mod score;

pub use bank::{load_bank, parse_bank, Question, QuestionBank, QuestionOption};
pub use report::{emit_report, ReportFormat};
pub use score::{administer, answer_question, AnswerRecord, DimensionResult, QuestionnaireResult};

use crate::lm::LmError;
use thiserror::Error;

/// Errors from bank loading, scoring, and report emission.
#[derive(Debug, Error)]
pub enum EvalError {
    #[error("bank schema error: {0}")]
    SchemaError(String),
    #[error("duplicate question id {0:?}")]
    DuplicateId(String),
    #[error("question {id}: options must carry the dimension's two attitudes, one each")]
    BadOptionAttitudes { id: String },
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
