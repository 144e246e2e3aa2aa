//! Pluggable text-annotation backend for dataset construction.
//!
//! Two backends share one interface: a remote chat-completion service and a
//! deterministic offline mock. The mock is a pure function of (seed, inputs)
//! and produces byte-identical output across runs and thread schedules; it
//! also injects per-attitude marker tokens that give desk-scale training a
//! learnable signal.

pub mod mock;
pub mod remote;

use crate::mbti::{Dimension, PersonalityType};
use crate::prompt::TemplateSet;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which backend a config selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BackendKind::Remote => f.write_str("remote"),
            BackendKind::Mock => f.write_str("mock"),
        }
    }
}

/// Annotation backend settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    /// Endpoint base URL; remote only. `MM_API_BASE` overrides it.
    pub endpoint_url: String,
    pub model_name: String,
    /// Maximum in-flight requests during fan-out.
    pub max_parallel: usize,
    /// Retries after the first attempt; total attempts = max_retries + 1.
    pub max_retries: usize,
    /// Per-request timeout in seconds.
    pub timeout_secs: f64,
    /// Mock determinism seed; ignored by the remote backend.
    pub seed: u64,
}

impl BackendConfig {
    pub fn mock(seed: u64) -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint_url: String::new(),
            model_name: "mock".to_string(),
            max_parallel: 1,
            max_retries: 0,
            timeout_secs: 30.0,
            seed,
        }
    }

    pub fn remote(endpoint_url: &str, model_name: &str) -> Self {
        BackendConfig {
            kind: BackendKind::Remote,
            endpoint_url: endpoint_url.to_string(),
            model_name: model_name.to_string(),
            max_parallel: 4,
            max_retries: 2,
            timeout_secs: 30.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), AnnotatorError> {
        if self.max_parallel < 1 {
            return Err(AnnotatorError::InvalidConfig(
                "max_parallel must be at least 1".into(),
            ));
        }
        if self.timeout_secs <= 0.0 {
            return Err(AnnotatorError::InvalidConfig(
                "timeout must be positive".into(),
            ));
        }
        if self.kind == BackendKind::Remote && self.endpoint_url.is_empty()
            && std::env::var("MM_API_BASE").is_err()
        {
            return Err(AnnotatorError::InvalidConfig(
                "remote backend needs endpoint_url or MM_API_BASE".into(),
            ));
        }
        Ok(())
    }
}

/// Errors from annotation calls.
#[derive(Debug, Error)]
pub enum AnnotatorError {
    #[error("backend unavailable after {attempts} attempts: {reason}")]
    BackendUnavailable { attempts: u32, reason: String },
    #[error("unparseable reply after {attempts} attempts (last reply: {last_reply:?})")]
    UnparseableReply { attempts: u32, last_reply: String },
    #[error("invalid backend config: {0}")]
    InvalidConfig(String),
    #[error("instruction must be non-empty")]
    EmptyInstruction,
}

/// Result of annotating one instruction during fan-out. Malformed replies
/// are flagged rather than guessed; flagged outcomes carry no payload.
#[derive(Debug, Clone)]
pub struct AnnotationOutcome<P> {
    pub payload: Option<P>,
    pub attempts: u32,
    pub backend: BackendKind,
    pub flagged_malformed: bool,
}

/// The classified dimension plus the attitude-styled response pair for one
/// instruction. `response_first` carries the dimension's canonical-first
/// attitude, `response_second` its opposite.
#[derive(Debug, Clone)]
pub struct PairAnnotation {
    pub dimension: Dimension,
    pub response_first: String,
    pub response_second: String,
}

/// Annotation façade over the configured backend.
pub struct Annotator {
    config: BackendConfig,
    templates: TemplateSet,
    remote: Option<remote::RemoteClient>,
}

impl Annotator {
    pub fn new(config: BackendConfig, templates: TemplateSet) -> Result<Self, AnnotatorError> {
        config.validate()?;
        let remote = match config.kind {
            BackendKind::Remote => Some(remote::RemoteClient::new(&config)?),
            BackendKind::Mock => None,
        };
        Ok(Annotator {
            config,
            templates,
            remote,
        })
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    /// Classifies an instruction into exactly one of the four dimensions.
    pub fn classify_dimension(&self, instruction: &str) -> Result<Dimension, AnnotatorError> {
        self.classify_with_attempts(instruction).map(|(d, _)| d)
    }

    fn classify_with_attempts(
        &self,
        instruction: &str,
    ) -> Result<(Dimension, u32), AnnotatorError> {
        if instruction.is_empty() {
            return Err(AnnotatorError::EmptyInstruction);
        }
        match self.config.kind {
            BackendKind::Mock => Ok((mock::classify_dimension(self.config.seed, instruction), 1)),
            BackendKind::Remote => {
                let client = self.remote.as_ref().expect("remote client");
                let user = self.templates.format_classify(instruction);
                client.call_parsed(&self.templates.system, &user, 0.0, |reply| {
                    remote::parse_dimension_reply(reply)
                })
            }
        }
    }

    /// Generates the attitude-contrastive response pair for an instruction
    /// already classified into `dimension`.
    pub fn generate_attitude_pair(
        &self,
        instruction: &str,
        dimension: Dimension,
    ) -> Result<(String, String), AnnotatorError> {
        self.pair_with_attempts(instruction, dimension).map(|(p, _)| p)
    }

    fn pair_with_attempts(
        &self,
        instruction: &str,
        dimension: Dimension,
    ) -> Result<((String, String), u32), AnnotatorError> {
        if instruction.is_empty() {
            return Err(AnnotatorError::EmptyInstruction);
        }
        match self.config.kind {
            BackendKind::Mock => Ok((
                mock::generate_attitude_pair(self.config.seed, instruction, dimension),
                1,
            )),
            BackendKind::Remote => {
                let client = self.remote.as_ref().expect("remote client");
                let user = self.templates.format_pair(instruction, dimension.as_str());
                client.call_parsed(&self.templates.system, &user, 0.7, |reply| {
                    remote::parse_pair_reply(reply)
                })
            }
        }
    }

    /// Generates `n` self-awareness Q&A pairs for a personality type.
    /// Answers are first person and reflect the type's traits.
    pub fn generate_self_awareness_qa(
        &self,
        personality: PersonalityType,
        n: usize,
    ) -> Result<Vec<(String, String)>, AnnotatorError> {
        if n < 1 {
            return Err(AnnotatorError::InvalidConfig(
                "self-awareness count must be at least 1".into(),
            ));
        }
        match self.config.kind {
            BackendKind::Mock => Ok((0..n)
                .map(|i| mock::self_awareness_qa(self.config.seed, personality, i))
                .collect()),
            BackendKind::Remote => {
                let client = self.remote.as_ref().expect("remote client");
                let user = self.templates.format_awareness(&personality.code());
                let mut out = Vec::with_capacity(n);
                for _ in 0..n {
                    let (qa, _) = client.call_parsed(&self.templates.system, &user, 0.7, |reply| {
                        remote::parse_qa_reply(reply)
                    })?;
                    out.push(qa);
                }
                Ok(out)
            }
        }
    }

    /// Classifies and pair-annotates a whole corpus with up to
    /// `max_parallel` requests in flight. Results come back in input order;
    /// unparseable replies become flagged outcomes, while an unavailable
    /// backend aborts the run.
    pub fn annotate_instructions(
        &self,
        instructions: &[String],
    ) -> Result<Vec<AnnotationOutcome<PairAnnotation>>, AnnotatorError> {
        type Slot = std::sync::Mutex<Option<Result<AnnotationOutcome<PairAnnotation>, AnnotatorError>>>;
        let workers = self.config.max_parallel.min(instructions.len().max(1));
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<Slot> = (0..instructions.len()).map(|_| std::sync::Mutex::new(None)).collect();

        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                    if i >= instructions.len() {
                        break;
                    }
                    let result = self.annotate_one(&instructions[i]);
                    *slots[i].lock().unwrap() = Some(result);
                });
            }
        });

        let mut out = Vec::with_capacity(instructions.len());
        for slot in slots {
            out.push(slot.into_inner().unwrap().expect("worker filled every slot")?);
        }
        Ok(out)
    }

    pub(crate) fn annotate_one(
        &self,
        instruction: &str,
    ) -> Result<AnnotationOutcome<PairAnnotation>, AnnotatorError> {
        let flagged = |attempts: u32, what: &str, last_reply: &str| {
            log::warn!(
                "skipping instruction after {attempts} unparseable {what} replies \
                 (last: {last_reply:?})"
            );
            AnnotationOutcome {
                payload: None,
                attempts,
                backend: self.config.kind,
                flagged_malformed: true,
            }
        };
        let dimension = match self.classify_with_attempts(instruction) {
            Ok((d, _)) => d,
            Err(AnnotatorError::UnparseableReply { attempts, last_reply }) => {
                return Ok(flagged(attempts, "classification", &last_reply));
            }
            Err(e) => return Err(e),
        };
        match self.pair_with_attempts(instruction, dimension) {
            Ok(((first, second), attempts)) => Ok(AnnotationOutcome {
                payload: Some(PairAnnotation {
                    dimension,
                    response_first: first,
                    response_second: second,
                }),
                attempts,
                backend: self.config.kind,
                flagged_malformed: false,
            }),
            Err(AnnotatorError::UnparseableReply { attempts, last_reply }) => {
                Ok(flagged(attempts, "pair", &last_reply))
            }
            Err(e) => Err(e),
        }
    }
}
