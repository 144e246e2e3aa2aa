//! Question bank schema and validation.

use super::EvalError;
use crate::mbti::{Attitude, Dimension};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::path::Path;

/// One answer option.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionOption {
    pub label: String,
    pub text: String,
    pub attitude: Attitude,
}

/// One two-option question probing a single dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub dimension: Dimension,
    pub text: String,
    pub options: Vec<QuestionOption>,
}

impl Question {
    pub fn option(&self, label: &str) -> &QuestionOption {
        self.options
            .iter()
            .find(|o| o.label == label)
            .expect("validated questions have labels A and B")
    }
}

/// A validated question bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionBank {
    pub version: String,
    pub questions: Vec<Question>,
}

impl QuestionBank {
    /// Questions probing one dimension, in bank order.
    pub fn for_dimension(&self, d: Dimension) -> Vec<&Question> {
        self.questions.iter().filter(|q| q.dimension == d).collect()
    }
}

/// Parses and validates a bank from JSON text.
pub fn parse_bank(json: &str) -> Result<QuestionBank, EvalError> {
    let bank: QuestionBank =
        serde_json::from_str(json).map_err(|e| EvalError::SchemaError(e.to_string()))?;
    validate_bank(&bank)?;
    Ok(bank)
}

/// Loads and validates a bank file.
pub fn load_bank(path: &Path) -> Result<QuestionBank, EvalError> {
    let body = std::fs::read_to_string(path)?;
    parse_bank(&body)
}

fn validate_bank(bank: &QuestionBank) -> Result<(), EvalError> {
    let mut ids = HashSet::new();
    for q in &bank.questions {
        if !ids.insert(q.id.clone()) {
            return Err(EvalError::DuplicateId(q.id.clone()));
        }
        if q.text.is_empty() {
            return Err(EvalError::SchemaError(format!("question {} has empty text", q.id)));
        }
        if q.options.len() != 2 {
            return Err(EvalError::SchemaError(format!(
                "question {} has {} options, expected 2",
                q.id,
                q.options.len()
            )));
        }
        if q.options[0].label != "A" || q.options[1].label != "B" {
            return Err(EvalError::SchemaError(format!(
                "question {} options must be labeled A then B",
                q.id
            )));
        }
        let (first, second) = q.dimension.attitudes();
        let got: HashSet<Attitude> = q.options.iter().map(|o| o.attitude).collect();
        let want: HashSet<Attitude> = [first, second].into_iter().collect();
        if got != want {
            return Err(EvalError::BadOptionAttitudes { id: q.id.clone() });
        }
        if q.options.iter().any(|o| o.text.is_empty()) {
            return Err(EvalError::SchemaError(format!(
                "question {} has an empty option text",
                q.id
            )));
        }
    }
    for d in Dimension::ALL {
        if bank.for_dimension(d).is_empty() {
            return Err(EvalError::SchemaError(format!(
                "bank covers no {d} questions"
            )));
        }
    }
    Ok(())
}

/// The bank shipped with the crate.
pub fn default_bank() -> QuestionBank {
    parse_bank(crate::assets::DEFAULT_BANK).expect("shipped bank is valid")
}
