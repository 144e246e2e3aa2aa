//! Subcommand implementations.

use crate::config::RunConfig;
use crate::{exit, GenerateArgs, TrainCommonArgs};
use anyhow::{bail, Context, Result};
use persona_core::annotator::Annotator;
use persona_core::dataset::{self, BehaviorDataset, DatasetManifest};
use persona_core::eval::{administer, emit_report, load_bank, parse_bank, ReportFormat};
use persona_core::lm::checkpoint as ckpt;
use persona_core::lm::{
    generate, merge_adapter, Decode, LoraAdapter, ModelView, ParameterStore,
};
use persona_core::mbti::{Dimension, PersonalityType};
use persona_core::trainer::{
    self, gradient_check, load_checkpoint, preference_accuracy, save_checkpoint, write_train_log,
    GradScope, LossKind, PairExample, SftExample, SftStage,
};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

const ACTIVE_ADAPTER_MARKER: &str = "active_adapter";

pub fn model_init(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let model_cfg = cfg.model_config();
    let params: ParameterStore<f32> = ParameterStore::init(&model_cfg)?;
    ckpt::save_model(out, &params)?;
    cfg.echo_into(out, "model init")?;
    println!(
        "initialized {} ({} layers, dim {}, context {})",
        out.display(),
        model_cfg.layers,
        model_cfg.model_dim,
        model_cfg.context_len
    );
    Ok(exit::OK)
}

pub fn dataset_build_behavior(cfg: &RunConfig, corpus_path: &Path, out: &Path) -> Result<i32> {
    let corpus = dataset::load_corpus(corpus_path)
        .with_context(|| format!("loading corpus {}", corpus_path.display()))?;
    let annotator = Annotator::new(cfg.backend_config()?, cfg.templates()?)?;
    let source = corpus_path.display().to_string();
    let (ds, manifest) = dataset::build_behavior_dataset(&corpus, &annotator, &source)?;
    dataset::write_behavior(out, &ds, &manifest)?;
    cfg.echo_into(out, "dataset build-behavior")?;
    println!(
        "built {} records over {} instructions ({} flagged) into {}",
        ds.total_records(),
        ds.instruction_ids().len(),
        manifest.flagged_instructions,
        out.display()
    );
    Ok(exit::OK)
}

pub fn dataset_build_awareness(cfg: &RunConfig, type_code: &str, out: &Path) -> Result<i32> {
    let personality = parse_type(type_code)?;
    let annotator = Annotator::new(cfg.backend_config()?, cfg.templates()?)?;
    let records =
        dataset::build_self_awareness_dataset(personality, cfg.awareness_count, &annotator)?;
    dataset::write_awareness(out, personality, &records, annotator.config().kind, cfg.seed)?;
    cfg.echo_into(out, "dataset build-awareness")?;
    println!(
        "wrote {} {} records into {}",
        records.len(),
        personality.code(),
        out.display()
    );
    Ok(exit::OK)
}

pub fn dataset_stats(input: &Path) -> Result<i32> {
    let ds = BehaviorDataset::load(input)?;
    let stats = dataset::composition_stats(&ds);
    println!("dimension     instructions  ratio");
    for d in Dimension::ALL {
        let count = stats.counts[&d];
        match &stats.ratios {
            Some(r) => println!("{:<13} {:>12}  {:.4}", d.to_string(), count, r[&d]),
            None => println!("{:<13} {:>12}  undefined", d.to_string(), count),
        }
    }
    if let Some(r) = &stats.ratios {
        let sum: f64 = r.values().sum();
        println!("total {:>20}  {sum:.4}", stats.total());
    }
    Ok(exit::OK)
}

pub fn dataset_rebalance(cfg: &RunConfig, input: &Path, out: &Path, ratios: &str) -> Result<i32> {
    let targets = parse_ratios(ratios)?;
    let ds = BehaviorDataset::load(input)?;
    let rebalanced = dataset::rebalance(&ds, &targets, cfg.seed)?;
    // The rebalanced output is a fresh dataset with its own manifest.
    let mut manifest = DatasetManifest::load(input).unwrap_or_else(|_| {
        DatasetManifest::empty(persona_core::annotator::BackendKind::Mock, cfg.seed, "")
    });
    for a in persona_core::mbti::Attitude::ALL {
        manifest
            .behavior_records
            .insert(a.letter().to_string(), rebalanced.shard(a).len() as u64);
    }
    manifest.awareness_records.clear();
    manifest.preference_records.clear();
    manifest.seed = cfg.seed;
    dataset::write_behavior(out, &rebalanced, &manifest)?;
    cfg.echo_into(out, "dataset rebalance")?;
    let stats = dataset::composition_stats(&rebalanced);
    println!(
        "kept {} instructions ({} records) into {}",
        stats.total(),
        rebalanced.total_records(),
        out.display()
    );
    Ok(exit::OK)
}

pub fn dataset_extract_dpo(
    cfg: &RunConfig,
    type_code: &str,
    input: &Path,
    out: &Path,
) -> Result<i32> {
    let personality = parse_type(type_code)?;
    let ds = BehaviorDataset::load(input)?;
    let pairs = dataset::extract_preference_pairs(&ds, personality, &cfg.templates()?)?;
    dataset::write_preference_file(out, &pairs)?;
    // Keep the dataset manifest in agreement when the file lands inside it.
    if out.starts_with(input) && input.join("manifest.json").exists() {
        dataset::note_preferences_in_manifest(input, personality, pairs.len() as u64)?;
    }
    println!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(exit::OK)
}

pub fn dataset_validate(input: &Path) -> Result<i32> {
    let report = dataset::validate_dataset(input)?;
    if report.is_clean() {
        println!("0 violations");
        Ok(exit::OK)
    } else {
        for v in &report.violations {
            eprintln!("{v}");
        }
        eprintln!("{} violations", report.violations.len());
        Ok(exit::USER)
    }
}

fn load_sft_examples(
    cfg: &RunConfig,
    data: &Path,
    stage: SftStage,
    personality: PersonalityType,
) -> Result<Vec<SftExample>> {
    let templates = cfg.templates()?;
    match stage {
        SftStage::Behavior => {
            let ds = BehaviorDataset::load(data)?;
            let records = dataset::select_for_personality(&ds, personality);
            if records.is_empty() {
                bail!("dataset {} has no records for {}", data.display(), personality);
            }
            Ok(records
                .iter()
                .map(|r| SftExample::from_behavior(r, &templates))
                .collect())
        }
        SftStage::Awareness => {
            let path = data
                .join("awareness")
                .join(format!("{}.jsonl", personality.code()));
            if !path.exists() {
                bail!(
                    "no awareness data at {}; run `dataset build-awareness` first",
                    path.display()
                );
            }
            let body = std::fs::read_to_string(&path)?;
            let mut out = Vec::new();
            for line in body.lines().filter(|l| !l.trim().is_empty()) {
                let record: persona_core::dataset::SelfAwarenessRecord =
                    serde_json::from_str(line)
                        .with_context(|| format!("parsing {}", path.display()))?;
                out.push(SftExample::from_awareness(&record, &templates));
            }
            if out.is_empty() {
                bail!("awareness file {} is empty", path.display());
            }
            Ok(out)
        }
    }
}

pub fn train_sft_cmd(
    cfg: &RunConfig,
    common: &TrainCommonArgs,
    stage: &str,
    init_from: Option<&Path>,
) -> Result<i32> {
    let stage = match stage {
        "behavior" => SftStage::Behavior,
        "awareness" => SftStage::Awareness,
        other => bail!("unknown stage {other:?}; expected behavior or awareness"),
    };
    let personality = parse_type(&common.type_code)?;
    let params = ckpt::load_model(&common.model)
        .with_context(|| format!("loading model checkpoint {}", common.model.display()))?;
    let examples = load_sft_examples(cfg, &common.data, stage, personality)?;
    let sft_cfg = cfg.sft_config(stage);

    let (adapter, resume_state) = match (&common.resume, init_from) {
        (Some(resume), _) => {
            let loaded = load_checkpoint(resume)
                .with_context(|| format!("loading resume checkpoint {}", resume.display()))?;
            (loaded.adapter, Some(loaded.state))
        }
        (None, Some(init)) => {
            let loaded = load_checkpoint(init)
                .with_context(|| format!("loading init checkpoint {}", init.display()))?;
            (loaded.adapter, None)
        }
        (None, None) => (
            LoraAdapter::init(
                &personality.code(),
                params.config(),
                cfg.lora_rank,
                cfg.lora_alpha,
                cfg.seed,
            ),
            None,
        ),
    };

    let run = trainer::train_sft(
        &params,
        adapter,
        &examples,
        &sft_cfg,
        resume_state,
        Some(&common.out),
    )?;
    save_checkpoint(&common.out, &run.adapter, None, &run.state, "sft")?;
    write_train_log(&common.out.join("train_log.jsonl"), &run.log)?;
    cfg.echo_into(&common.out, "train sft")?;
    let first = run.log.first().map(|l| l.loss).unwrap_or(f64::NAN);
    let last = run.log.last().map(|l| l.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} ({:?}) for {} steps: loss {first:.4} -> {last:.4}",
        personality.code(),
        sft_cfg.stage,
        run.state.step
    );
    Ok(exit::OK)
}

pub fn train_dpo_cmd(
    cfg: &RunConfig,
    common: &TrainCommonArgs,
    init_from: Option<&Path>,
) -> Result<i32> {
    let personality = parse_type(&common.type_code)?;
    let params = ckpt::load_model(&common.model)
        .with_context(|| format!("loading model checkpoint {}", common.model.display()))?;
    let ds = BehaviorDataset::load(&common.data)?;
    let pairs: Vec<PairExample> =
        dataset::extract_preference_pairs(&ds, personality, &cfg.templates()?)?
            .iter()
            .map(PairExample::from_pair)
            .collect();
    let dpo_cfg = cfg.dpo_config();

    let (adapter, reference, resume_state) = match (&common.resume, init_from) {
        (Some(resume), _) => {
            let loaded = load_checkpoint(resume)
                .with_context(|| format!("loading resume checkpoint {}", resume.display()))?;
            let reference = loaded.reference.clone().ok_or_else(|| {
                anyhow::anyhow!("resume checkpoint {} has no reference adapter", resume.display())
            })?;
            (loaded.adapter, reference, Some(loaded.state))
        }
        (None, Some(init)) => {
            let loaded = load_checkpoint(init)
                .with_context(|| format!("loading post-SFT checkpoint {}", init.display()))?;
            // The frozen reference is the post-SFT snapshot.
            let reference = loaded.adapter.clone();
            (loaded.adapter, reference, None)
        }
        (None, None) => bail!(
            "train dpo needs --init-from pointing at the post-SFT checkpoint \
             (run `train sft` first)"
        ),
    };

    let run = trainer::train_dpo(
        &params,
        adapter,
        &reference,
        &pairs,
        &dpo_cfg,
        resume_state,
        Some(&common.out),
    )?;
    save_checkpoint(&common.out, &run.adapter, Some(&reference), &run.state, "dpo")?;
    write_train_log(&common.out.join("train_log.jsonl"), &run.log)?;
    cfg.echo_into(&common.out, "train dpo")?;

    let view = ModelView::base(&params).attach(&run.adapter)?;
    let acc = preference_accuracy(&view, &pairs)?;
    let last = run.log.last().map(|l| l.loss).unwrap_or(f64::NAN);
    println!(
        "dpo {} for {} steps: final loss {last:.4}, training preference accuracy {acc:.3}",
        personality.code(),
        run.state.step
    );
    Ok(exit::OK)
}

pub fn adapter_list(model: &Path) -> Result<i32> {
    let adapters = ckpt::list_adapters(model)?;
    let active = std::fs::read_to_string(model.join(ACTIVE_ADAPTER_MARKER))
        .map(|s| s.trim().to_string())
        .unwrap_or_default();
    println!("{:<12} {:>4} {:>6}  active", "name", "rank", "alpha");
    for a in &adapters {
        let mark = if a.name == active { "*" } else { "" };
        println!("{:<12} {:>4} {:>6}  {mark}", a.name, a.rank, a.alpha);
    }
    Ok(exit::OK)
}

pub fn adapter_swap(model: &Path, to: &str) -> Result<i32> {
    let dir = model.join(format!("adapter-{to}"));
    if !dir.is_dir() {
        bail!("no adapter {to:?} in {} (expected {})", model.display(), dir.display());
    }
    std::fs::write(model.join(ACTIVE_ADAPTER_MARKER), format!("{to}\n"))?;
    println!("active adapter is now {to}");
    Ok(exit::OK)
}

pub fn adapter_merge(cfg: &RunConfig, model: &Path, adapter: &str, out: &Path) -> Result<i32> {
    let params = ckpt::load_model(model)?;
    let adapter = load_adapter_by_ref(model, adapter)?;
    let merged = merge_adapter(&params, &adapter)?;
    ckpt::save_model(out, &merged)?;
    cfg.echo_into(out, "adapter merge")?;
    println!("merged {} into {}", adapter.name, out.display());
    Ok(exit::OK)
}

/// Resolves `--adapter` as a path or as a name under the model directory.
fn load_adapter_by_ref(model: &Path, adapter_ref: &str) -> Result<LoraAdapter<f32>> {
    let as_path = PathBuf::from(adapter_ref);
    let dir = if as_path.is_dir() {
        as_path
    } else {
        let named = model.join(format!("adapter-{adapter_ref}"));
        if !named.is_dir() {
            bail!("adapter {adapter_ref:?} not found (no such path, and {} is missing)", named.display());
        }
        named
    };
    Ok(ckpt::load_adapter(&dir)?)
}

/// The adapter a model directory is currently pointed at, if any.
fn active_adapter(model: &Path) -> Result<Option<LoraAdapter<f32>>> {
    let marker = model.join(ACTIVE_ADAPTER_MARKER);
    if !marker.exists() {
        return Ok(None);
    }
    let name = std::fs::read_to_string(&marker)?.trim().to_string();
    if name.is_empty() {
        return Ok(None);
    }
    Ok(Some(load_adapter_by_ref(model, &name)?))
}

pub fn eval_mbti(
    cfg: &RunConfig,
    model: &Path,
    adapter_ref: Option<&str>,
    out: &Path,
) -> Result<i32> {
    let params = ckpt::load_model(model)?;
    let adapter = match adapter_ref {
        Some(a) => Some(load_adapter_by_ref(model, a)?),
        None => active_adapter(model)?,
    };
    let bank = if cfg.bank_path.is_empty() {
        parse_bank(persona_core::assets::DEFAULT_BANK)?
    } else {
        load_bank(Path::new(&cfg.bank_path))
            .with_context(|| format!("loading bank {}", cfg.bank_path))?
    };
    let templates = cfg.templates()?;

    let mut view = ModelView::base(&params);
    if let Some(adapter) = &adapter {
        view = view.attach(adapter)?;
    }
    let adapter_id = adapter.as_ref().map(|a| a.name.clone()).unwrap_or_else(|| "base".into());
    let result = administer(&view, &bank, &templates, &model.display().to_string(), &adapter_id)?;
    for format in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::SvgBars] {
        emit_report(&result, format, out)?;
    }
    cfg.echo_into(out, "eval mbti")?;
    println!("{}", result.code);
    Ok(exit::OK)
}

pub fn generate_cmd(cfg: &RunConfig, args: &GenerateArgs) -> Result<i32> {
    let params = ckpt::load_model(&args.model)?;
    let adapter = match &args.adapter {
        Some(a) => Some(load_adapter_by_ref(&args.model, a)?),
        None => active_adapter(&args.model)?,
    };
    let mut view = ModelView::base(&params);
    if let Some(adapter) = &adapter {
        view = view.attach(adapter)?;
    }
    let decode = match (args.greedy, args.temp) {
        (true, _) | (false, None) => Decode::Greedy,
        (false, Some(tau)) => Decode::Temperature {
            tau,
            seed: args.seed.unwrap_or(cfg.seed),
        },
    };
    let text = generate(&view, &args.prompt, decode, args.max_new)?;
    println!("{text}");
    Ok(exit::OK)
}

pub fn check_gradients(probes: usize, epsilon: f64, seed: u64, inject_fault: bool) -> Result<i32> {
    let mut worst = 0.0f64;
    for (kind, label) in [(LossKind::Sft, "sft"), (LossKind::Dpo, "dpo")] {
        let report = gradient_check(kind, GradScope::AdapterOnly, probes, epsilon, seed, inject_fault);
        println!("{label}: max relative error {:.3e} over {probes} probes", report.max_rel_err);
        worst = worst.max(report.max_rel_err);
    }
    if worst < 1e-4 {
        println!("gradient check passed");
        Ok(exit::OK)
    } else {
        eprintln!("gradient check FAILED (max relative error {worst:.3e} >= 1e-4)");
        Ok(exit::GRADCHECK)
    }
}

fn parse_type(code: &str) -> Result<PersonalityType> {
    PersonalityType::parse(code).map_err(|e| anyhow::anyhow!("{e}"))
}

fn parse_ratios(ratios: &str) -> Result<BTreeMap<Dimension, f64>> {
    let mut out = BTreeMap::new();
    for part in ratios.split(',') {
        let (key, value) = part
            .split_once('=')
            .with_context(|| format!("ratio part {part:?} is not dimension=value"))?;
        let dim = Dimension::parse(key.trim())
            .with_context(|| format!("unknown dimension {key:?}"))?;
        let value: f64 = value
            .trim()
            .parse()
            .with_context(|| format!("ratio value {value:?} is not a number"))?;
        out.insert(dim, value);
    }
    Ok(out)
}
