//! Training checkpoints: adapter, optional reference adapter, optimizer
//! moments, and the rng/order bookkeeping needed for exact resume.
//!
//! Layout under the checkpoint directory:
//!
//! - `adapter-<NAME>/` — the policy adapter (model adapter scheme)
//! - `reference/adapter-<NAME>/` — the frozen DPO reference, when present
//! - `optimizer/` — Adam moments in the tensor-file scheme
//! - `train_state.json` — step, rng state, epoch order, loss history
//!
//! A save→load→save cycle reproduces identical bytes, and resuming a run
//! from a checkpoint continues the interrupted seed stream exactly.

use super::{TrainError, TrainState};
use crate::lm::checkpoint::{list_adapters, load_adapter, read_tensor_files, write_tensor_files};
use crate::lm::{LoraAdapter, Tensor};
use crate::util::Pcg;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct TrainStateFile {
    schema_version: u32,
    kind: String,
    adapter_name: String,
    step: usize,
    rng_state: u64,
    order: Vec<usize>,
    cursor: usize,
    loss_history: Vec<f32>,
    margin_history: Vec<Option<f32>>,
}

/// A checkpoint read back from disk.
pub struct LoadedCheckpoint {
    pub adapter: LoraAdapter<f32>,
    pub reference: Option<LoraAdapter<f32>>,
    pub state: TrainState,
    /// `"sft"` or `"dpo"`.
    pub kind: String,
}

/// Writes a complete training checkpoint.
pub fn save_checkpoint(
    dir: &Path,
    adapter: &LoraAdapter<f32>,
    reference: Option<&LoraAdapter<f32>>,
    state: &TrainState,
    kind: &str,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    crate::lm::checkpoint::save_adapter(dir, adapter)?;
    if let Some(reference) = reference {
        let ref_dir = dir.join("reference");
        fs::create_dir_all(&ref_dir)?;
        crate::lm::checkpoint::save_adapter(&ref_dir, reference)?;
    }

    let opt_dir = dir.join("optimizer");
    fs::create_dir_all(&opt_dir)?;
    write_tensor_files(
        &opt_dir,
        state.moments.iter().flat_map(|(name, (m, v))| {
            [
                (format!("m.{name}"), m.shape().to_vec(), m.data().to_vec()),
                (format!("v.{name}"), v.shape().to_vec(), v.data().to_vec()),
            ]
        }),
    )?;

    let file = TrainStateFile {
        schema_version: 1,
        kind: kind.to_string(),
        adapter_name: adapter.name.clone(),
        step: state.step,
        rng_state: state.rng.state(),
        order: state.order.clone(),
        cursor: state.cursor,
        loss_history: state.loss_history.clone(),
        margin_history: state.margin_history.clone(),
    };
    let mut body = serde_json::to_vec_pretty(&file)?;
    body.push(b'\n');
    fs::write(dir.join("train_state.json"), body)?;
    Ok(())
}

/// Reads a training checkpoint back. Length or shape mismatches in any
/// tensor file surface as `CorruptCheckpoint`.
pub fn load_checkpoint(dir: &Path) -> Result<LoadedCheckpoint, TrainError> {
    let state_file: TrainStateFile =
        serde_json::from_slice(&fs::read(dir.join("train_state.json"))?)?;

    let adapter_dir = dir.join(format!("adapter-{}", state_file.adapter_name));
    let adapter = load_adapter(&adapter_dir).map_err(corrupt)?;

    let reference = {
        let ref_root = dir.join("reference");
        if ref_root.exists() {
            let found = list_adapters(&ref_root).map_err(corrupt)?;
            match found.first() {
                Some(cfg) => Some(
                    load_adapter(&ref_root.join(format!("adapter-{}", cfg.name)))
                        .map_err(corrupt)?,
                ),
                None => None,
            }
        } else {
            None
        }
    };

    let mut moments: BTreeMap<String, (Tensor<f32>, Tensor<f32>)> = BTreeMap::new();
    let opt_dir = dir.join("optimizer");
    if opt_dir.exists() {
        type Halves = (Option<Tensor<f32>>, Option<Tensor<f32>>);
        let mut halves: BTreeMap<String, Halves> = BTreeMap::new();
        for (name, tensor) in read_tensor_files(&opt_dir).map_err(corrupt)? {
            if let Some(rest) = name.strip_prefix("m.") {
                halves.entry(rest.to_string()).or_default().0 = Some(tensor);
            } else if let Some(rest) = name.strip_prefix("v.") {
                halves.entry(rest.to_string()).or_default().1 = Some(tensor);
            }
        }
        for (name, (m, v)) in halves {
            let (m, v) = match (m, v) {
                (Some(m), Some(v)) => (m, v),
                _ => {
                    return Err(TrainError::CorruptCheckpoint {
                        reason: format!("optimizer moments for {name} are incomplete"),
                    })
                }
            };
            moments.insert(name, (m, v));
        }
    }

    Ok(LoadedCheckpoint {
        adapter,
        reference,
        state: TrainState {
            step: state_file.step,
            rng: Pcg::from_state(state_file.rng_state),
            order: state_file.order,
            cursor: state_file.cursor,
            moments,
            loss_history: state_file.loss_history,
            margin_history: state_file.margin_history,
        },
        kind: state_file.kind,
    })
}

fn corrupt(e: crate::lm::LmError) -> TrainError {
    TrainError::CorruptCheckpoint {
        reason: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::{ModelConfig, ParameterStore};
    use crate::trainer::loss::SftExample;
    use crate::trainer::run::train_sft;
    use crate::trainer::{SftConfig, SftStage};

    fn setup() -> (ParameterStore<f32>, LoraAdapter<f32>, Vec<SftExample>) {
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
                completion: "z.".into(),
            },
        ];
        (params, adapter, examples)
    }

    fn cfg(steps: usize) -> SftConfig {
        SftConfig {
            steps,
            batch_size: 2,
            ..SftConfig::new(SftStage::Behavior, 5)
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (params, adapter, examples) = setup();
        let run = train_sft(&params, adapter, &examples, &cfg(7), None, None).unwrap();

        let dir1 = tempfile::tempdir().unwrap();
        save_checkpoint(dir1.path(), &run.adapter, None, &run.state, "sft").unwrap();
        let loaded = load_checkpoint(dir1.path()).unwrap();
        assert_eq!(loaded.adapter, run.adapter);
        assert_eq!(loaded.state, run.state);
        assert_eq!(loaded.kind, "sft");

        let dir2 = tempfile::tempdir().unwrap();
        save_checkpoint(dir2.path(), &loaded.adapter, None, &loaded.state, "sft").unwrap();
        for rel in ["train_state.json", "optimizer/params.bin", "optimizer/tensors.json"] {
            assert_eq!(
                fs::read(dir1.path().join(rel)).unwrap(),
                fs::read(dir2.path().join(rel)).unwrap(),
                "{rel} differs after a round trip"
            );
        }
        let a1 = dir1.path().join("adapter-T/params.bin");
        let a2 = dir2.path().join("adapter-T/params.bin");
        assert_eq!(fs::read(a1).unwrap(), fs::read(a2).unwrap());
    }

    #[test]
    fn resume_equals_uninterrupted_run() {
        let (params, adapter, examples) = setup();
        let full = train_sft(&params, adapter.clone(), &examples, &cfg(20), None, None).unwrap();

        let half = train_sft(&params, adapter, &examples, &cfg(10), None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &half.adapter, None, &half.state, "sft").unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        let resumed = train_sft(
            &params,
            loaded.adapter,
            &examples,
            &cfg(20),
            Some(loaded.state),
            None,
        )
        .unwrap();

        assert_eq!(full.adapter, resumed.adapter);
        assert_eq!(full.state.loss_history, resumed.state.loss_history);
    }

    #[test]
    fn truncated_checkpoint_is_corrupt() {
        let (params, adapter, examples) = setup();
        let run = train_sft(&params, adapter, &examples, &cfg(3), None, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &run.adapter, None, &run.state, "sft").unwrap();
        let path = dir.path().join("adapter-T/params.bin");
        let blob = fs::read(&path).unwrap();
        fs::write(&path, &blob[..blob.len() - 8]).unwrap();
        assert!(matches!(
            load_checkpoint(dir.path()),
            Err(TrainError::CorruptCheckpoint { .. })
        ));
    }
}
