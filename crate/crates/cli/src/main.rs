//! `persona` — one binary for the whole pipeline: build datasets, train
//! personality adapters in two SFT stages plus DPO, manage adapters, and
//! score models against the questionnaire.
//!
//! Exit codes: 0 success, 1 validation/user error, 2 backend error,
//! 3 training divergence, 4 gradient-check failure.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "persona", version, about = "MBTI-conditioned toy language models")]
struct Cli {
    /// Flat TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model checkpoint management.
    Model {
        #[command(subcommand)]
        command: ModelCommand,
    },
    /// Dataset construction, statistics, and validation.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Supervised fine-tuning and preference optimization.
    Train {
        #[command(subcommand)]
        command: TrainCommand,
    },
    /// Adapter listing, swapping, and merging.
    Adapter {
        #[command(subcommand)]
        command: AdapterCommand,
    },
    /// Model evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
    /// Free-form generation from a checkpoint.
    Generate(GenerateArgs),
    /// Self-checks.
    Check {
        #[command(subcommand)]
        command: CheckCommand,
    },
}

#[derive(Subcommand)]
enum ModelCommand {
    /// Initialize a base model checkpoint.
    Init {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        layers: Option<usize>,
        #[arg(long)]
        model_dim: Option<usize>,
        #[arg(long)]
        heads: Option<usize>,
        #[arg(long)]
        ff_dim: Option<usize>,
        #[arg(long)]
        context_len: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Classify a corpus and generate attitude-pair responses.
    BuildBehavior {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate self-awareness Q&A for one personality type.
    BuildAwareness {
        #[arg(long = "type")]
        type_code: String,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory to add the records to.
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-dimension instruction counts and ratios.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Subsample towards target per-dimension ratios.
    Rebalance {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// e.g. energy=0.25,information=0.25,decision=0.25,execution=0.25
        #[arg(long)]
        ratios: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Extract preference pairs for one personality type.
    ExtractDpo {
        #[arg(long = "type")]
        type_code: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check schema, pairing, and manifest agreement.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

#[derive(Args)]
pub(crate) struct TrainCommonArgs {
    /// Base model checkpoint directory.
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Personality type code, e.g. INFP.
    #[arg(long = "type")]
    pub type_code: String,
    /// Output directory for the run.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue a checkpointed run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_seq_len: Option<usize>,
}

#[derive(Subcommand)]
enum TrainCommand {
    /// One supervised stage over the adapter.
    Sft {
        #[command(flatten)]
        common: TrainCommonArgs,
        /// behavior (stage 1) or awareness (stage 2).
        #[arg(long)]
        stage: String,
        /// Checkpoint to continue the adapter from (stage 2 starts from
        /// the stage-1 output).
        #[arg(long)]
        init_from: Option<PathBuf>,
    },
    /// Direct preference optimization against the post-SFT snapshot.
    Dpo {
        #[command(flatten)]
        common: TrainCommonArgs,
        /// The post-SFT checkpoint; its adapter becomes both the initial
        /// policy and the frozen reference.
        #[arg(long)]
        init_from: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
    },
}

#[derive(Subcommand)]
enum AdapterCommand {
    /// List adapters stored under a model directory.
    List {
        #[arg(long)]
        model: PathBuf,
    },
    /// Point the model's active-adapter marker at another adapter.
    Swap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        to: String,
    },
    /// Bake an adapter into the base weights as a new checkpoint.
    Merge {
        #[arg(long)]
        model: PathBuf,
        /// Adapter name under the model directory, or a path to an
        /// adapter directory.
        #[arg(long)]
        adapter: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Administer the questionnaire and write the report trio.
    Mbti {
        #[arg(long)]
        model: PathBuf,
        /// Adapter name under the model directory, or a path; defaults to
        /// the model's active adapter, if any.
        #[arg(long)]
        adapter: Option<String>,
        #[arg(long)]
        bank: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
pub(crate) struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub adapter: Option<String>,
    #[arg(long)]
    pub prompt: String,
    /// Greedy decoding (the default).
    #[arg(long)]
    pub greedy: bool,
    /// Sampling temperature; 0 means greedy.
    #[arg(long)]
    pub temp: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 64)]
    pub max_new: usize,
}

#[derive(Subcommand)]
enum CheckCommand {
    /// Finite-difference verification of both training losses.
    Gradients {
        #[arg(long, default_value_t = 20)]
        probes: usize,
        #[arg(long, default_value_t = 1e-3)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Negative control: flip analytic gradients; the check must fail.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
}

/// Exit codes used across subcommands.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USER: i32 = 1;
    pub const BACKEND: i32 = 2;
    pub const DIVERGED: i32 = 3;
    pub const GRADCHECK: i32 = 4;
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            classify_error(&err)
        }
    };
    std::process::exit(code);
}

/// Maps error chains onto the documented exit codes.
fn classify_error(err: &anyhow::Error) -> i32 {
    use persona_core::annotator::AnnotatorError;
    use persona_core::trainer::TrainError;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<AnnotatorError>() {
            if matches!(e, AnnotatorError::BackendUnavailable { .. }) {
                return exit::BACKEND;
            }
        }
        if let Some(persona_core::dataset::DatasetError::Annotator(
            AnnotatorError::BackendUnavailable { .. },
        )) = cause.downcast_ref::<persona_core::dataset::DatasetError>()
        {
            return exit::BACKEND;
        }
        if let Some(TrainError::DivergedLoss { .. }) = cause.downcast_ref::<TrainError>() {
            return exit::DIVERGED;
        }
    }
    exit::USER
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let config = config::RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Model { command } => match command {
            ModelCommand::Init {
                out,
                layers,
                model_dim,
                heads,
                ff_dim,
                context_len,
                seed,
            } => {
                let mut cfg = config.clone();
                apply(&mut cfg.layers, layers);
                apply(&mut cfg.model_dim, model_dim);
                apply(&mut cfg.heads, heads);
                apply(&mut cfg.ff_dim, ff_dim);
                apply(&mut cfg.context_len, context_len);
                apply(&mut cfg.model_seed, seed);
                commands::model_init(&cfg, &out)
            }
        },
        Command::Dataset { command } => match command {
            DatasetCommand::BuildBehavior {
                corpus,
                backend,
                seed,
                out,
            } => {
                let mut cfg = config.clone();
                apply(&mut cfg.backend, backend);
                apply(&mut cfg.seed, seed);
                commands::dataset_build_behavior(&cfg, &corpus, &out)
            }
            DatasetCommand::BuildAwareness {
                type_code,
                count,
                backend,
                seed,
                out,
            } => {
                let mut cfg = config.clone();
                apply(&mut cfg.backend, backend);
                apply(&mut cfg.seed, seed);
                apply(&mut cfg.awareness_count, count);
                commands::dataset_build_awareness(&cfg, &type_code, &out)
            }
            DatasetCommand::Stats { input } => commands::dataset_stats(&input),
            DatasetCommand::Rebalance {
                input,
                out,
                ratios,
                seed,
            } => {
                let mut cfg = config.clone();
                apply(&mut cfg.seed, seed);
                commands::dataset_rebalance(&cfg, &input, &out, &ratios)
            }
            DatasetCommand::ExtractDpo {
                type_code,
                input,
                out,
            } => commands::dataset_extract_dpo(&config, &type_code, &input, &out),
            DatasetCommand::Validate { input } => commands::dataset_validate(&input),
        },
        Command::Train { command } => match command {
            TrainCommand::Sft {
                common,
                stage,
                init_from,
            } => {
                let mut cfg = config.clone();
                apply_train(&mut cfg, &common);
                commands::train_sft_cmd(&cfg, &common, &stage, init_from.as_deref())
            }
            TrainCommand::Dpo {
                common,
                init_from,
                beta,
            } => {
                let mut cfg = config.clone();
                apply_train(&mut cfg, &common);
                apply(&mut cfg.dpo_beta, beta);
                commands::train_dpo_cmd(&cfg, &common, init_from.as_deref())
            }
        },
        Command::Adapter { command } => match command {
            AdapterCommand::List { model } => commands::adapter_list(&model),
            AdapterCommand::Swap { model, to } => commands::adapter_swap(&model, &to),
            AdapterCommand::Merge {
                model,
                adapter,
                out,
            } => commands::adapter_merge(&config, &model, &adapter, &out),
        },
        Command::Eval { command } => match command {
            EvalCommand::Mbti {
                model,
                adapter,
                bank,
                out,
            } => {
                let mut cfg = config.clone();
                if let Some(bank) = &bank {
                    cfg.bank_path = bank.display().to_string();
                }
                commands::eval_mbti(&cfg, &model, adapter.as_deref(), &out)
            }
        },
        Command::Generate(args) => commands::generate_cmd(&config, &args),
        Command::Check { command } => match command {
            CheckCommand::Gradients {
                probes,
                epsilon,
                seed,
                inject_fault,
            } => commands::check_gradients(probes, epsilon, seed, inject_fault),
        },
    }
}

fn apply<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply_train(cfg: &mut config::RunConfig, common: &TrainCommonArgs) {
    apply(&mut cfg.sft_steps, common.steps);
    apply(&mut cfg.dpo_steps, common.steps);
    apply(&mut cfg.sft_learning_rate, common.lr);
    apply(&mut cfg.dpo_learning_rate, common.lr);
    apply(&mut cfg.sft_batch_size, common.batch_size);
    apply(&mut cfg.dpo_batch_size, common.batch_size);
    apply(&mut cfg.seed, common.seed);
    apply(&mut cfg.max_seq_len, common.max_seq_len);
}
