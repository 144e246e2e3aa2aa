//! Option scoring and verdict aggregation.
//!
//! Answers come from length-normalized sequence log-probabilities rather
//! than free-text generation, so small models cannot fail by misformatting
//! their answer. Options of different lengths compare on mean per-token
//! log-probability; under a uniform-logit model every question ties.

use super::bank::{Question, QuestionBank};
use super::EvalError;
use crate::lm::{forward, ModelView, Vocabulary};
use crate::mbti::{Attitude, Dimension};
use crate::prompt::TemplateSet;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Score differences at or below this are an exact tie. Per-token values
/// are computed in f64; genuine ties (e.g. a uniform-logit model scoring
/// options of different lengths) land within a few 1e-16 of each other,
/// while any learned preference is orders of magnitude larger.
const TIE_EPS: f64 = 1e-9;

/// Mean per-token log-probability of `completion` after `prompt`, with the
/// log-sum-exp and the sum over tokens accumulated in f64.
fn mean_option_logprob(
    view: &ModelView<'_, f32>,
    prompt: &[usize],
    completion: &[usize],
) -> Result<f64, EvalError> {
    let mut seq = Vec::with_capacity(1 + prompt.len() + completion.len());
    seq.push(Vocabulary::BOS);
    seq.extend_from_slice(prompt);
    seq.extend_from_slice(completion);
    let out = forward(view, &seq)?;
    let mut total = 0.0f64;
    for (offset, &token) in completion.iter().enumerate() {
        // Row `i` predicts `seq[i + 1]`; completion starts at 1 + prompt len.
        let row = out.logits.row(prompt.len() + offset);
        let mx = row.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&v| ((v as f64) - mx).exp()).sum();
        total += (row[token] as f64 - mx) - sum.ln();
    }
    Ok(total / completion.len() as f64)
}

/// How one question was answered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub chosen_label: String,
    pub chosen_attitude: Attitude,
    /// Mean per-token log-probability of option A's text.
    pub logprob_a: f64,
    /// Mean per-token log-probability of option B's text.
    pub logprob_b: f64,
    pub tie: bool,
}

/// Aggregates for one dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DimensionResult {
    pub dimension: Dimension,
    /// Count for the dichotomy's first attitude (E, S, T or J).
    pub count_first: usize,
    /// Count for the second attitude (I, N, F or P).
    pub count_second: usize,
    pub share_first: f64,
    pub share_second: f64,
    pub verdict: Attitude,
    /// Set when the split is exactly even and the canonical-first tie rule
    /// decided the verdict.
    pub indeterminate: bool,
}

/// Full questionnaire outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuestionnaireResult {
    pub code: String,
    pub dimensions: Vec<DimensionResult>,
    pub bank_version: String,
    pub model_id: String,
    pub adapter_id: String,
    pub answers: Vec<AnswerRecord>,
}

impl QuestionnaireResult {
    pub fn dimension(&self, d: Dimension) -> &DimensionResult {
        &self.dimensions[d.index()]
    }
}

/// Scores one question: build the evaluation prompt, score each option text
/// as a completion, choose the higher mean per-token log-probability. An
/// exact tie chooses label A and sets the tie flag.
pub fn answer_question(
    view: &ModelView<'_, f32>,
    question: &Question,
    templates: &TemplateSet,
) -> Result<AnswerRecord, EvalError> {
    let prompt = Vocabulary::encode(&templates.format_eval_question(&question.text));
    let mut scores = [0.0f64; 2];
    for (slot, option) in question.options.iter().enumerate() {
        let completion = Vocabulary::encode(&option.text);
        scores[slot] = mean_option_logprob(view, &prompt, &completion)?;
    }
    let (label_idx, tie) = if (scores[0] - scores[1]).abs() <= TIE_EPS {
        (0, true)
    } else if scores[0] > scores[1] {
        (0, false)
    } else {
        (1, false)
    };
    let chosen = &question.options[label_idx];
    Ok(AnswerRecord {
        question_id: question.id.clone(),
        chosen_label: chosen.label.clone(),
        chosen_attitude: chosen.attitude,
        logprob_a: scores[0],
        logprob_b: scores[1],
        tie,
    })
}

/// Answers every question in bank order and aggregates the verdicts. A
/// dimension's verdict is the attitude holding more than half its answers;
/// an exact half goes to the canonical-first attitude with the
/// indeterminate flag set.
pub fn administer(
    view: &ModelView<'_, f32>,
    bank: &QuestionBank,
    templates: &TemplateSet,
    model_id: &str,
    adapter_id: &str,
) -> Result<QuestionnaireResult, EvalError> {
    // Questions score independently against the immutable view; the
    // aggregation below is count-based and order-independent.
    use rayon::prelude::*;
    let answers: Vec<AnswerRecord> = bank
        .questions
        .par_iter()
        .map(|q| answer_question(view, q, templates))
        .collect::<Result<_, _>>()?;

    let mut counts: BTreeMap<Dimension, (usize, usize)> =
        Dimension::ALL.iter().map(|&d| (d, (0, 0))).collect();
    for (question, answer) in bank.questions.iter().zip(&answers) {
        let (first, _) = question.dimension.attitudes();
        let slot = counts.get_mut(&question.dimension).expect("all dimensions");
        if answer.chosen_attitude == first {
            slot.0 += 1;
        } else {
            slot.1 += 1;
        }
    }

    let mut dimensions = Vec::with_capacity(4);
    for d in Dimension::ALL {
        let (count_first, count_second) = counts[&d];
        let total = count_first + count_second;
        let (first, second) = d.attitudes();
        let (share_first, share_second) = if total == 0 {
            (0.0, 0.0)
        } else {
            (
                count_first as f64 / total as f64,
                count_second as f64 / total as f64,
            )
        };
        // Integer comparison makes the exact-tie case exact.
        let (verdict, indeterminate) = if count_first * 2 == total {
            (first, true)
        } else if count_first * 2 > total {
            (first, false)
        } else {
            (second, false)
        };
        dimensions.push(DimensionResult {
            dimension: d,
            count_first,
            count_second,
            share_first,
            share_second,
            verdict,
            indeterminate,
        });
    }

    let code: String = dimensions.iter().map(|r| r.verdict.letter()).collect();
    Ok(QuestionnaireResult {
        code,
        dimensions,
        bank_version: bank.version.clone(),
        model_id: model_id.to_string(),
        adapter_id: adapter_id.to_string(),
        answers,
    })
}
