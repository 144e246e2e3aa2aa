//! Training loops: Adam over adapter tensors with gradient clipping,
//! deterministic batch order, and divergence handling.

use super::checkpoint::save_checkpoint;
use super::loss::{dpo_loss_node, DpoItem, PairExample, SftExample};
use super::{
    DpoConfig, SftConfig, TrainError, TrainState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
    GRAD_CLIP_NORM,
};
use crate::lm::model::{adapter_tensor_name, GraphModel};
use crate::lm::{sequence_logprob, LoraAdapter, ModelView, ParameterStore, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

type GradMap = BTreeMap<String, Tensor<f32>>;

/// One `train_log.jsonl` line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogLine {
    pub step: usize,
    pub loss: f64,
    pub margin: Option<f64>,
}

/// A finished (or resumed-and-finished) training run.
pub struct TrainRun {
    pub adapter: LoraAdapter<f32>,
    pub state: TrainState,
    pub log: Vec<TrainLogLine>,
}

/// Writes the per-step log next to a checkpoint.
pub fn write_train_log(path: &Path, log: &[TrainLogLine]) -> std::io::Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in log {
        serde_json::to_writer(&mut file, line)?;
        file.write_all(b"\n")?;
    }
    file.flush()
}

fn adapter_grad_names(adapter: &LoraAdapter<f32>) -> Vec<String> {
    let mut names = Vec::with_capacity(adapter.pairs.len() * 2);
    for pair in &adapter.pairs {
        names.push(adapter_tensor_name(&adapter.name, &pair.target, 'a'));
        names.push(adapter_tensor_name(&adapter.name, &pair.target, 'b'));
    }
    names
}

fn next_batch(state: &mut TrainState, n_examples: usize, batch_size: usize) -> Vec<usize> {
    let mut batch = Vec::with_capacity(batch_size);
    while batch.len() < batch_size {
        if state.cursor >= state.order.len() {
            state.order = (0..n_examples).collect();
            state.rng.shuffle(&mut state.order);
            state.cursor = 0;
        }
        batch.push(state.order[state.cursor]);
        state.cursor += 1;
    }
    batch
}

/// Clips the gradient set to a global norm of [`GRAD_CLIP_NORM`], then
/// applies one Adam step to each adapter tensor.
fn clip_and_apply(
    adapter: &mut LoraAdapter<f32>,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut TrainState,
    lr: f64,
) {
    let mut sq_sum = 0.0f64;
    for g in grads.values() {
        for &v in g.data() {
            sq_sum += (v as f64) * (v as f64);
        }
    }
    let norm = sq_sum.sqrt();
    let clip = if norm > GRAD_CLIP_NORM {
        (GRAD_CLIP_NORM / norm) as f32
    } else {
        1.0
    };

    let t = (state.step + 1) as i32;
    let bias1 = 1.0 - ADAM_BETA1.powi(t);
    let bias2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = lr as f32;

    for pair_idx in 0..adapter.pairs.len() {
        let target = adapter.pairs[pair_idx].target.clone();
        for side in ['a', 'b'] {
            let name = adapter_tensor_name(&adapter.name, &target, side);
            let Some(grad) = grads.get(&name) else { continue };
            let tensor = {
                let pair = &mut adapter.pairs[pair_idx];
                if side == 'a' {
                    &mut pair.a
                } else {
                    &mut pair.b
                }
            };
            let (m, v) = state
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(grad.shape()), Tensor::zeros(grad.shape())));
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (i, w) in tensor.data_mut().iter_mut().enumerate() {
                let g = grad.data()[i] * clip;
                md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * g;
                vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = md[i] / bias1;
                let v_hat = vd[i] / bias2;
                *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn collect_adapter_grads(
    gm: &GraphModel<'_, f32>,
    grads: &crate::lm::graph::Gradients<f32>,
    names: &[String],
) -> BTreeMap<String, Tensor<f32>> {
    let mut out = BTreeMap::new();
    for name in names {
        if let Some(node) = gm.leaf(name) {
            if let Some(g) = grads.get(node) {
                out.insert(name.clone(), g.clone());
            }
        }
    }
    out
}

/// Accumulates `scale * delta` into the running gradient map, visiting
/// items in a fixed order so f32 addition stays deterministic.
fn accumulate_grads(
    total: &mut BTreeMap<String, Tensor<f32>>,
    delta: &BTreeMap<String, Tensor<f32>>,
    scale: f32,
) {
    for (name, g) in delta {
        match total.get_mut(name) {
            Some(acc) => {
                for (a, &d) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += scale * d;
                }
            }
            None => {
                let mut t = g.clone();
                for v in t.data_mut() {
                    *v *= scale;
                }
                total.insert(name.clone(), t);
            }
        }
    }
}

/// Supervised fine-tuning over one adapter. The base model is frozen and
/// bitwise unchanged; the run is a deterministic function of (initial
/// state, data order, seed). Passing `resume` continues a checkpointed run
/// exactly as if it had never stopped.
pub fn train_sft(
    params: &ParameterStore<f32>,
    adapter: LoraAdapter<f32>,
    examples: &[SftExample],
    cfg: &SftConfig,
    resume: Option<TrainState>,
    divergence_dir: Option<&Path>,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let tokenized: Vec<(Vec<usize>, Vec<usize>)> = examples
        .iter()
        .map(|e| (e.prompt_tokens(), e.completion_tokens()))
        .collect();
    let max_len = cfg.max_seq_len.min(params.config().context_len);
    for (p, c) in &tokenized {
        let len = 1 + p.len() + c.len();
        if len > max_len {
            return Err(TrainError::Lm(crate::lm::LmError::ContextOverflow {
                len,
                context_len: max_len,
            }));
        }
    }

    let mut adapter = adapter;
    let mut state = resume.unwrap_or_else(|| TrainState::fresh(cfg.seed));
    let grad_names = adapter_grad_names(&adapter);
    let mut log = Vec::with_capacity(cfg.steps.saturating_sub(state.step));
    // Snapshot of the most recent state whose tensors were all finite, for
    // the divergence checkpoint.
    let mut last_finite = (adapter.clone(), state.clone());

    while state.step < cfg.steps {
        let batch_idx = next_batch(&mut state, tokenized.len(), cfg.batch_size);
        let total_tokens: usize = batch_idx.iter().map(|&i| tokenized[i].1.len()).sum();

        // Batch items are independent graphs; run them in parallel and
        // merge per-item gradients in index order. The combined loss is
        // -(sum of sequence log-probs) / total completion tokens.
        let per_item: Vec<Result<(f64, GradMap), TrainError>> = batch_idx
            .par_iter()
            .map(|&i| {
                let (prompt, completion) = &tokenized[i];
                let view = ModelView::base(params).attach(&adapter)?;
                let mut gm = GraphModel::new(view, &|name| name.starts_with("adapter."));
                let lp_node = gm.sequence_logprob_node(prompt, completion)?;
                let lp = gm.graph.value(lp_node).item() as f64;
                let grads = gm.graph.backward(lp_node)?;
                Ok((lp, collect_adapter_grads(&gm, &grads, &grad_names)))
            })
            .collect();

        let mut lp_sum = 0.0f64;
        let mut grad_map: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        let scale = -1.0f32 / total_tokens as f32;
        for item in per_item {
            let (lp, grads) = item?;
            lp_sum += lp;
            accumulate_grads(&mut grad_map, &grads, scale);
        }
        let loss = -lp_sum / total_tokens as f64;
        if !loss.is_finite() {
            if let Some(dir) = divergence_dir {
                let _ = save_checkpoint(dir, &last_finite.0, None, &last_finite.1, "sft");
            }
            return Err(TrainError::DivergedLoss { step: state.step });
        }
        clip_and_apply(&mut adapter, &grad_map, &mut state, cfg.learning_rate);

        state.loss_history.push(loss as f32);
        state.margin_history.push(None);
        log.push(TrainLogLine {
            step: state.step,
            loss,
            margin: None,
        });
        state.step += 1;
        if adapter.pairs.iter().all(|p| p.a.all_finite() && p.b.all_finite()) {
            last_finite = (adapter.clone(), state.clone());
        }
    }

    debug_assert!(adapter.pairs.iter().all(|p| p.a.all_finite() && p.b.all_finite()));
    Ok(TrainRun {
        adapter,
        state,
        log,
    })
}

/// Direct preference optimization of one adapter against a frozen
/// reference (normally the post-SFT snapshot of the same adapter).
/// Reference log-probabilities are computed once up front since the
/// reference never moves.
pub fn train_dpo(
    params: &ParameterStore<f32>,
    adapter: LoraAdapter<f32>,
    reference: &LoraAdapter<f32>,
    pairs: &[PairExample],
    cfg: &DpoConfig,
    resume: Option<TrainState>,
    divergence_dir: Option<&Path>,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let max_len = cfg.max_seq_len.min(params.config().context_len);
    let tokenized: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> = pairs
        .iter()
        .map(|p| (p.prompt_tokens(), p.chosen_tokens(), p.rejected_tokens()))
        .collect();
    for (p, c, r) in &tokenized {
        let len = 1 + p.len() + c.len().max(r.len());
        if len > max_len {
            return Err(TrainError::Lm(crate::lm::LmError::ContextOverflow {
                len,
                context_len: max_len,
            }));
        }
    }

    // Frozen-reference log-probabilities, one pass over the data.
    let ref_view = ModelView::base(params).attach(reference)?;
    let ref_lps: Vec<(f64, f64)> = tokenized
        .par_iter()
        .map(|(p, c, r)| {
            let lc = sequence_logprob(&ref_view, p, c).expect("checked context");
            let lr = sequence_logprob(&ref_view, p, r).expect("checked context");
            (lc, lr)
        })
        .collect();

    let mut adapter = adapter;
    let mut state = resume.unwrap_or_else(|| TrainState::fresh(cfg.seed));
    let grad_names = adapter_grad_names(&adapter);
    let mut log = Vec::with_capacity(cfg.steps.saturating_sub(state.step));
    let mut last_finite = (adapter.clone(), state.clone());

    while state.step < cfg.steps {
        let batch_idx = next_batch(&mut state, tokenized.len(), cfg.batch_size);

        // One independent graph per pair, in parallel; the batch loss is
        // the mean of per-pair losses.
        let per_item: Vec<Result<(f64, f64, GradMap), TrainError>> = batch_idx
                .par_iter()
                .map(|&i| {
                    let item = DpoItem {
                        prompt: tokenized[i].0.clone(),
                        chosen: tokenized[i].1.clone(),
                        rejected: tokenized[i].2.clone(),
                        ref_chosen_lp: ref_lps[i].0,
                        ref_rejected_lp: ref_lps[i].1,
                    };
                    let view = ModelView::base(params).attach(&adapter)?;
                    let mut gm =
                        GraphModel::new(view, &|name| name.starts_with("adapter."));
                    let (loss_node, margins) =
                        dpo_loss_node(&mut gm, std::slice::from_ref(&item), cfg.beta)?;
                    let loss = gm.graph.value(loss_node).item() as f64;
                    let grads = gm.graph.backward(loss_node)?;
                    Ok((loss, margins[0], collect_adapter_grads(&gm, &grads, &grad_names)))
                })
                .collect();

        let mut loss_sum = 0.0f64;
        let mut margin_sum = 0.0f64;
        let mut grad_map: BTreeMap<String, Tensor<f32>> = BTreeMap::new();
        let scale = 1.0f32 / batch_idx.len() as f32;
        for item in per_item {
            let (loss, margin, grads) = item?;
            loss_sum += loss;
            margin_sum += margin;
            accumulate_grads(&mut grad_map, &grads, scale);
        }
        let loss = loss_sum / batch_idx.len() as f64;
        if !loss.is_finite() {
            if let Some(dir) = divergence_dir {
                let _ =
                    save_checkpoint(dir, &last_finite.0, Some(reference), &last_finite.1, "dpo");
            }
            return Err(TrainError::DivergedLoss { step: state.step });
        }
        clip_and_apply(&mut adapter, &grad_map, &mut state, cfg.learning_rate);

        let mean_margin = margin_sum / batch_idx.len() as f64;
        state.loss_history.push(loss as f32);
        state.margin_history.push(Some(mean_margin as f32));
        log.push(TrainLogLine {
            step: state.step,
            loss,
            margin: Some(mean_margin),
        });
        state.step += 1;
        if adapter.pairs.iter().all(|p| p.a.all_finite() && p.b.all_finite()) {
            last_finite = (adapter.clone(), state.clone());
        }
    }

    Ok(TrainRun {
        adapter,
        state,
        log,
    })
}

/// Fraction of pairs where the view assigns the chosen completion a higher
/// log-probability than the rejected one.
pub fn preference_accuracy(
    view: &ModelView<'_, f32>,
    pairs: &[PairExample],
) -> Result<f64, TrainError> {
    if pairs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let wins: Vec<bool> = pairs
        .par_iter()
        .map(|p| {
            let prompt = p.prompt_tokens();
            let lc = sequence_logprob(view, &prompt, &p.chosen_tokens())?;
            let lr = sequence_logprob(view, &prompt, &p.rejected_tokens())?;
            Ok::<bool, crate::lm::LmError>(lc > lr)
        })
        .collect::<Result<_, _>>()?;
    Ok(wins.iter().filter(|&&w| w).count() as f64 / wins.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ModelConfig;

    fn tiny_setup() -> (ParameterStore<f32>, LoraAdapter<f32>, Vec<SftExample>) {
        let cfg = ModelConfig::tiny(0);
        let params = ParameterStore::init(&cfg).unwrap();
        let adapter = LoraAdapter::init("T", &cfg, 2, 4.0, 1);
        let examples = vec![
            SftExample {
                prompt: "Q: a\nA: ".into(),
                completion: "x.".into(),
            },
            SftExample {
                prompt: "Q: b\nA: ".into(),
                completion: "y.".into(),
            },
            SftExample {
                prompt: "Q: c\nA: ".into(),
                completion: "x!".into(),
            },
        ];
        (params, adapter, examples)
    }

    fn sft_cfg(steps: usize) -> SftConfig {
        SftConfig {
            steps,
            batch_size: 2,
            ..SftConfig::new(super::super::SftStage::Behavior, 9)
        }
    }

    #[test]
    fn base_params_stay_bitwise_frozen() {
        let (params, adapter, examples) = tiny_setup();
        let before = params.clone();
        let run = train_sft(&params, adapter, &examples, &sft_cfg(5), None, None).unwrap();
        assert_eq!(params, before);
        assert_eq!(run.state.step, 5);
        assert_eq!(run.log.len(), 5);
    }

    #[test]
    fn same_seed_gives_identical_adapters() {
        let (params, adapter, examples) = tiny_setup();
        let a = train_sft(&params, adapter.clone(), &examples, &sft_cfg(8), None, None).unwrap();
        let b = train_sft(&params, adapter, &examples, &sft_cfg(8), None, None).unwrap();
        assert_eq!(a.adapter, b.adapter);
        assert_eq!(a.state.loss_history, b.state.loss_history);
    }

    #[test]
    fn sft_loss_decreases_on_tiny_data() {
        // A 16-dim frozen random base with rank-2 attention adapters has
        // little capacity; expect steady improvement, not memorization.
        // The desk-scale halving check lives in the acceptance suite.
        let (params, adapter, examples) = tiny_setup();
        let cfg = SftConfig {
            learning_rate: 3e-3,
            ..sft_cfg(300)
        };
        let run = train_sft(&params, adapter, &examples, &cfg, None, None).unwrap();
        let first = run.log[0].loss;
        let last = run.log.last().unwrap().loss;
        assert!(
            last < first - 0.15,
            "loss {first} -> {last} shows no learning"
        );
    }

    #[test]
    fn dpo_starts_at_ln2_and_margin_rises() {
        let (params, adapter, _) = tiny_setup();
        let pairs = vec![
            PairExample {
                prompt: "Q: a\nA: ".into(),
                chosen: "<mk_F> kind.".into(),
                rejected: "<mk_T> cold.".into(),
            },
            PairExample {
                prompt: "Q: b\nA: ".into(),
                chosen: "<mk_F> warm.".into(),
                rejected: "<mk_T> hard.".into(),
            },
        ];
        let reference = adapter.clone();
        let cfg = DpoConfig {
            steps: 60,
            batch_size: 2,
            ..DpoConfig::new(4)
        };
        let run = train_dpo(&params, adapter, &reference, &pairs, &cfg, None, None).unwrap();
        // Policy starts at the reference: step-0 loss is exactly ln 2.
        assert!((run.log[0].loss - std::f64::consts::LN_2).abs() < 1e-5);
        let first_margin = run.log[0].margin.unwrap();
        let last_margin = run.log.last().unwrap().margin.unwrap();
        assert!(last_margin > first_margin, "{first_margin} -> {last_margin}");

        // After training, held-out style accuracy on the training pairs is
        // perfect for this tiny set.
        let view = ModelView::base(&params).attach(&run.adapter).unwrap();
        assert_eq!(preference_accuracy(&view, &pairs).unwrap(), 1.0);
    }

    #[test]
    fn context_overflow_is_checked_up_front() {
        let (params, adapter, _) = tiny_setup();
        let long = SftExample {
            prompt: "Q: ".to_string() + &"a".repeat(60) + "\nA: ",
            completion: "x".into(),
        };
        let err = train_sft(&params, adapter, &[long], &sft_cfg(1), None, None)
            .err()
            .expect("overflow must fail");
        assert!(matches!(err, TrainError::Lm(crate::lm::LmError::ContextOverflow { .. })));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (params, adapter, _) = tiny_setup();
        assert!(matches!(
            train_sft(&params, adapter, &[], &sft_cfg(1), None, None),
            Err(TrainError::EmptyDataset)
        ));
    }

    #[test]
    fn diverged_loss_aborts_and_checkpoints_last_finite_state() {
        // An absurd learning rate overflows the adapter path to inf/NaN
        // within a few steps; the run must abort with DivergedLoss and
        // leave a checkpoint of the last finite state behind.
        let (params, adapter, examples) = tiny_setup();
        let cfg = SftConfig {
            learning_rate: 1e30,
            ..sft_cfg(50)
        };
        let dir = tempfile::tempdir().unwrap();
        let err = train_sft(&params, adapter, &examples, &cfg, None, Some(dir.path()))
            .err()
            .expect("divergence expected");
        assert!(matches!(err, TrainError::DivergedLoss { .. }), "{err}");
        assert!(dir.path().join("train_state.json").exists());
        let loaded = super::super::checkpoint::load_checkpoint(dir.path()).unwrap();
        assert!(loaded.adapter.pairs.iter().all(|p| p.a.all_finite() && p.b.all_finite()));
    }

    #[test]
    fn parallel_step_matches_reference_loss_builder() {
        // The per-item decomposition used by the training loop must agree
        // with the whole-batch loss builders the gradient check validates.
        let (params, adapter, examples) = tiny_setup();
        let tokenized: Vec<(Vec<usize>, Vec<usize>)> = examples
            .iter()
            .map(|e| (e.prompt_tokens(), e.completion_tokens()))
            .collect();
        let total_tokens: usize = tokenized.iter().map(|(_, c)| c.len()).sum();

        let view = ModelView::base(&params).attach(&adapter).unwrap();
        let mut gm = GraphModel::new(view, &|n: &str| n.starts_with("adapter."));
        let reference_loss = {
            let node = super::super::loss::sft_loss_node(&mut gm, &tokenized).unwrap();
            gm.graph.value(node).item() as f64
        };

        let mut lp_sum = 0.0f64;
        for (p, c) in &tokenized {
            let view = ModelView::base(&params).attach(&adapter).unwrap();
            let mut gm = GraphModel::new(view, &|n: &str| n.starts_with("adapter."));
            let node = gm.sequence_logprob_node(p, c).unwrap();
            lp_sum += gm.graph.value(node).item() as f64;
        }
        let decomposed_loss = -lp_sum / total_tokens as f64;
        assert!(
            (reference_loss - decomposed_loss).abs() < 1e-5,
            "{reference_loss} vs {decomposed_loss}"
        );
    }
}
