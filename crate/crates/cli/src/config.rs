//! Run configuration: defaults, overridden by a flat TOML config file,
//! overridden by environment, overridden by flags. The effective values are
//! echoed into every output directory as `effective_config.json` so a run
//! can be reproduced from its artifacts alone.

use anyhow::{Context, Result};
use persona_core::annotator::{BackendConfig, BackendKind};
use persona_core::lm::ModelConfig;
use persona_core::trainer::{DpoConfig, SftConfig, SftStage};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Every tunable of the pipeline, flat. Field names double as the config
/// file keys.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    // Model architecture.
    pub layers: usize,
    pub model_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub context_len: usize,
    pub model_seed: u64,

    // Annotation backend.
    pub backend: String,
    pub endpoint_url: String,
    pub model_name: String,
    pub max_parallel: usize,
    pub max_retries: usize,
    pub timeout_secs: f64,
    pub seed: u64,

    // Adapters.
    pub lora_rank: usize,
    pub lora_alpha: f64,

    // Training.
    pub sft_learning_rate: f64,
    pub sft_steps: usize,
    pub sft_batch_size: usize,
    pub dpo_learning_rate: f64,
    pub dpo_beta: f64,
    pub dpo_steps: usize,
    pub dpo_batch_size: usize,
    pub max_seq_len: usize,

    // Assets.
    pub templates_dir: String,
    pub bank_path: String,
    pub awareness_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        RunConfig {
            layers: model.layers,
            model_dim: model.model_dim,
            heads: model.heads,
            ff_dim: model.ff_dim,
            context_len: model.context_len,
            model_seed: 0,
            backend: "mock".into(),
            endpoint_url: String::new(),
            model_name: "mock".into(),
            max_parallel: 2,
            max_retries: 2,
            timeout_secs: 30.0,
            seed: 0,
            lora_rank: persona_core::lm::lora::DEFAULT_RANK,
            lora_alpha: persona_core::lm::lora::DEFAULT_ALPHA,
            sft_learning_rate: 3e-3,
            sft_steps: 300,
            sft_batch_size: 8,
            dpo_learning_rate: 1e-4,
            dpo_beta: 0.1,
            dpo_steps: 150,
            dpo_batch_size: 4,
            max_seq_len: 192,
            templates_dir: String::new(),
            bank_path: String::new(),
            awareness_count: 60,
        }
    }
}

impl RunConfig {
    /// Defaults, then the config file (when given), then environment.
    /// Flags apply on top via the `apply_*` helpers in each command.
    ///
    /// Both flat TOML files and echoed `effective_config.json` files are
    /// accepted, so a run can be reproduced straight from its artifacts.
    pub fn load(config_path: Option<&Path>) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = config_path {
            let body = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            cfg = if path.extension().map(|e| e == "json").unwrap_or(false) {
                serde_json::from_str(&body)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            } else {
                toml::from_str(&body)
                    .with_context(|| format!("parsing config file {}", path.display()))?
            };
        }
        // MM_API_BASE overrides the configured endpoint.
        if let Ok(base) = std::env::var("MM_API_BASE") {
            if !base.is_empty() {
                cfg.endpoint_url = base;
            }
        }
        Ok(cfg)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            layers: self.layers,
            model_dim: self.model_dim,
            heads: self.heads,
            ff_dim: self.ff_dim,
            context_len: self.context_len,
            vocab: persona_core::lm::Vocabulary::SIZE,
            seed: self.model_seed,
        }
    }

    pub fn backend_config(&self) -> Result<BackendConfig> {
        let kind = match self.backend.as_str() {
            "mock" => BackendKind::Mock,
            "remote" => BackendKind::Remote,
            other => anyhow::bail!("unknown backend {other:?}; expected mock or remote"),
        };
        Ok(BackendConfig {
            kind,
            endpoint_url: self.endpoint_url.clone(),
            model_name: self.model_name.clone(),
            max_parallel: self.max_parallel,
            max_retries: self.max_retries,
            timeout_secs: self.timeout_secs,
            seed: self.seed,
        })
    }

    pub fn sft_config(&self, stage: SftStage) -> SftConfig {
        SftConfig {
            stage,
            learning_rate: self.sft_learning_rate,
            steps: self.sft_steps,
            batch_size: self.sft_batch_size,
            seed: self.seed,
            max_seq_len: self.max_seq_len,
        }
    }

    pub fn dpo_config(&self) -> DpoConfig {
        DpoConfig {
            beta: self.dpo_beta,
            learning_rate: self.dpo_learning_rate,
            steps: self.dpo_steps,
            batch_size: self.dpo_batch_size,
            seed: self.seed,
            max_seq_len: self.max_seq_len,
        }
    }

    pub fn templates(&self) -> Result<persona_core::prompt::TemplateSet> {
        if self.templates_dir.is_empty() {
            Ok(persona_core::prompt::TemplateSet::embedded())
        } else {
            persona_core::prompt::TemplateSet::load_dir(Path::new(&self.templates_dir))
                .with_context(|| format!("loading templates from {}", self.templates_dir))
        }
    }

    /// Writes `effective_config.json` into an output directory.
    pub fn echo_into(&self, out_dir: &Path, command: &str) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        #[derive(Serialize)]
        struct Effective<'a> {
            command: &'a str,
            #[serde(flatten)]
            config: &'a RunConfig,
        }
        let body = serde_json::to_string_pretty(&Effective {
            command,
            config: self,
        })?;
        std::fs::write(out_dir.join("effective_config.json"), body + "\n")?;
        Ok(())
    }
}
