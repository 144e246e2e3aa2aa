//! Prompt templates shared by annotation, training, and evaluation.
//!
//! Templates are plain text assets with `{instruction}`, `{input}`,
//! `{dimension}`, `{type}` and `{question}` placeholders. The shipped
//! defaults are embedded at compile time and can be replaced by pointing a
//! run at a directory containing files with the same names. Training and
//! evaluation share the response-prompt template, so the context a response
//! is scored in matches the context it was trained in.

use std::fs;
use std::io;
use std::path::Path;

/// File names recognized by [`TemplateSet::load_dir`].
pub const TEMPLATE_FILES: [&str; 7] = [
    "system.txt",
    "classify.txt",
    "pair.txt",
    "awareness.txt",
    "prompt.txt",
    "prompt_input.txt",
    "eval_question.txt",
];

/// The seven prompt templates used across the pipeline.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    /// System message for remote annotation calls.
    pub system: String,
    /// Dimension-classification request; uses `{instruction}`.
    pub classify: String,
    /// Attitude-pair generation request; uses `{instruction}` and
    /// `{dimension}`.
    pub pair: String,
    /// Self-awareness Q&A generation request; uses `{type}`.
    pub awareness: String,
    /// Response prompt for instructions without input; uses `{instruction}`.
    pub prompt: String,
    /// Response prompt for instructions with input; adds `{input}`.
    pub prompt_input: String,
    /// Questionnaire scoring prompt; uses `{question}`.
    pub eval_question: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::embedded()
    }
}

impl TemplateSet {
    /// The versioned templates shipped with the crate.
    pub fn embedded() -> Self {
        TemplateSet {
            system: include_str!("../assets/templates/system.txt").to_string(),
            classify: include_str!("../assets/templates/classify.txt").to_string(),
            pair: include_str!("../assets/templates/pair.txt").to_string(),
            awareness: include_str!("../assets/templates/awareness.txt").to_string(),
            prompt: include_str!("../assets/templates/prompt.txt").to_string(),
            prompt_input: include_str!("../assets/templates/prompt_input.txt").to_string(),
            eval_question: include_str!("../assets/templates/eval_question.txt").to_string(),
        }
    }

    /// Loads all seven templates from a directory.
    pub fn load_dir(dir: &Path) -> io::Result<Self> {
        let read = |name: &str| fs::read_to_string(dir.join(name));
        Ok(TemplateSet {
            system: read("system.txt")?,
            classify: read("classify.txt")?,
            pair: read("pair.txt")?,
            awareness: read("awareness.txt")?,
            prompt: read("prompt.txt")?,
            prompt_input: read("prompt_input.txt")?,
            eval_question: read("eval_question.txt")?,
        })
    }

    /// Writes the embedded templates into a directory, e.g. to seed a
    /// user-editable copy.
    pub fn write_dir(dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let set = Self::embedded();
        for (name, text) in [
            ("system.txt", &set.system),
            ("classify.txt", &set.classify),
            ("pair.txt", &set.pair),
            ("awareness.txt", &set.awareness),
            ("prompt.txt", &set.prompt),
            ("prompt_input.txt", &set.prompt_input),
            ("eval_question.txt", &set.eval_question),
        ] {
            fs::write(dir.join(name), text)?;
        }
        Ok(())
    }

    /// The response prompt for an (instruction, input) pair. Empty input
    /// selects the shorter no-input template.
    pub fn format_prompt(&self, instruction: &str, input: &str) -> String {
        if input.is_empty() {
            fill(&self.prompt, &[("instruction", instruction)])
        } else {
            fill(
                &self.prompt_input,
                &[("instruction", instruction), ("input", input)],
            )
        }
    }

    /// The questionnaire scoring prompt for a question text.
    pub fn format_eval_question(&self, question: &str) -> String {
        fill(&self.eval_question, &[("question", question)])
    }

    pub fn format_classify(&self, instruction: &str) -> String {
        fill(&self.classify, &[("instruction", instruction)])
    }

    pub fn format_pair(&self, instruction: &str, dimension: &str) -> String {
        fill(
            &self.pair,
            &[("instruction", instruction), ("dimension", dimension)],
        )
    }

    pub fn format_awareness(&self, type_code: &str) -> String {
        fill(&self.awareness, &[("type", type_code)])
    }
}

fn fill(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in vars {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}
