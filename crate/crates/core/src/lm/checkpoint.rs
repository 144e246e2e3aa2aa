//! Checkpoint directory format for models and adapters.
//!
//! A checkpoint directory holds three files:
//!
//! - `config.json` — the [`ModelConfig`] (or adapter metadata)
//! - `tensors.json` — ordered list of `{name, shape, dtype, byte_offset}`
//! - `params.bin` — little-endian 32-bit floats, row-major, concatenated
//!   in `tensors.json` order
//!
//! Adapters live in `adapter-<NAME>/` subdirectories with the same scheme.
//! Loading validates the total byte length exactly.

use super::config::ModelConfig;
use super::lora::{LoraAdapter, LoraPair};
use super::tensor::Tensor;
use super::LmError;
use super::ParameterStore;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    byte_offset: u64,
}

/// Adapter metadata stored as the adapter directory's `config.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdapterConfig {
    pub name: String,
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<String>,
}

pub(crate) fn write_tensor_files(
    dir: &Path,
    tensors: impl Iterator<Item = (String, Vec<usize>, Vec<f32>)>,
) -> Result<(), LmError> {
    let mut entries = Vec::new();
    let mut blob: Vec<u8> = Vec::new();
    for (name, shape, data) in tensors {
        entries.push(TensorEntry {
            name,
            shape,
            dtype: "f32".to_string(),
            byte_offset: blob.len() as u64,
        });
        for v in data {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join("tensors.json"), serde_json::to_vec_pretty(&entries)?)?;
    fs::write(dir.join("params.bin"), blob)?;
    Ok(())
}

pub(crate) fn read_tensor_files(dir: &Path) -> Result<Vec<(String, Tensor<f32>)>, LmError> {
    let entries: Vec<TensorEntry> =
        serde_json::from_slice(&fs::read(dir.join("tensors.json"))?)?;
    let blob = fs::read(dir.join("params.bin"))?;

    let expected_len: usize = entries
        .iter()
        .map(|e| e.shape.iter().product::<usize>() * 4)
        .sum();
    if blob.len() != expected_len {
        return Err(LmError::CorruptCheckpoint {
            reason: format!(
                "params.bin is {} bytes, tensors.json describes {}",
                blob.len(),
                expected_len
            ),
        });
    }

    let mut out = Vec::with_capacity(entries.len());
    for e in &entries {
        let count: usize = e.shape.iter().product();
        let start = e.byte_offset as usize;
        let end = start + count * 4;
        if e.dtype != "f32" {
            return Err(LmError::CorruptCheckpoint {
                reason: format!("tensor {} has unsupported dtype {}", e.name, e.dtype),
            });
        }
        if end > blob.len() {
            return Err(LmError::CorruptCheckpoint {
                reason: format!("tensor {} extends past end of params.bin", e.name),
            });
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        out.push((e.name.clone(), Tensor::from_vec(&e.shape, data)));
    }
    Ok(out)
}

/// Writes a model checkpoint directory, creating it if needed.
pub fn save_model(dir: &Path, params: &ParameterStore<f32>) -> Result<(), LmError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join("config.json"),
        serde_json::to_vec_pretty(params.config())?,
    )?;
    write_tensor_files(
        dir,
        params.names().iter().map(|n| {
            let t = params.tensor(n);
            (n.clone(), t.shape().to_vec(), t.data().to_vec())
        }),
    )
}

/// Loads a model checkpoint directory.
pub fn load_model(dir: &Path) -> Result<ParameterStore<f32>, LmError> {
    let config: ModelConfig = serde_json::from_slice(&fs::read(dir.join("config.json"))?)?;
    let entries = read_tensor_files(dir)?;
    ParameterStore::from_parts(config, entries)
}

/// Writes `adapter-<NAME>/` under `parent`.
pub fn save_adapter(parent: &Path, adapter: &LoraAdapter<f32>) -> Result<(), LmError> {
    let dir = parent.join(format!("adapter-{}", adapter.name));
    fs::create_dir_all(&dir)?;
    let cfg = AdapterConfig {
        name: adapter.name.clone(),
        rank: adapter.rank,
        alpha: adapter.alpha,
        targets: adapter.pairs.iter().map(|p| p.target.clone()).collect(),
    };
    fs::write(dir.join("config.json"), serde_json::to_vec_pretty(&cfg)?)?;
    write_tensor_files(
        &dir,
        adapter.pairs.iter().flat_map(|p| {
            [
                (
                    format!("{}.lora_a", p.target),
                    p.a.shape().to_vec(),
                    p.a.data().to_vec(),
                ),
                (
                    format!("{}.lora_b", p.target),
                    p.b.shape().to_vec(),
                    p.b.data().to_vec(),
                ),
            ]
        }),
    )
}

/// Loads an adapter from its `adapter-<NAME>/` directory.
pub fn load_adapter(dir: &Path) -> Result<LoraAdapter<f32>, LmError> {
    let cfg: AdapterConfig = serde_json::from_slice(&fs::read(dir.join("config.json"))?)?;
    let tensors = read_tensor_files(dir)?;
    let lookup: std::collections::HashMap<String, Tensor<f32>> = tensors.into_iter().collect();
    let mut pairs = Vec::with_capacity(cfg.targets.len());
    for target in &cfg.targets {
        let a = lookup
            .get(&format!("{target}.lora_a"))
            .cloned()
            .ok_or_else(|| LmError::CorruptCheckpoint {
                reason: format!("missing tensor {target}.lora_a"),
            })?;
        let b = lookup
            .get(&format!("{target}.lora_b"))
            .cloned()
            .ok_or_else(|| LmError::CorruptCheckpoint {
                reason: format!("missing tensor {target}.lora_b"),
            })?;
        pairs.push(LoraPair {
            target: target.clone(),
            a,
            b,
        });
    }
    Ok(LoraAdapter {
        name: cfg.name,
        rank: cfg.rank,
        alpha: cfg.alpha,
        pairs,
    })
}

/// Lists the adapters stored under a model directory, by name.
pub fn list_adapters(dir: &Path) -> Result<Vec<AdapterConfig>, LmError> {
    let mut out = Vec::new();
    if !dir.exists() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let file_name = entry.file_name();
        let name = file_name.to_string_lossy();
        if entry.path().is_dir() && name.starts_with("adapter-") {
            let cfg: AdapterConfig =
                serde_json::from_slice(&fs::read(entry.path().join("config.json"))?)?;
            out.push(cfg);
        }
    }
    out.sort_by(|a, b| a.name.cmp(&b.name));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::config::ModelConfig;

    #[test]
    fn model_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params: ParameterStore<f32> =
            ParameterStore::init(&ModelConfig::tiny(13)).unwrap();
        save_model(dir.path(), &params).unwrap();
        let loaded = load_model(dir.path()).unwrap();
        assert_eq!(params, loaded);

        // Saving the load produces identical bytes.
        let dir2 = tempfile::tempdir().unwrap();
        save_model(dir2.path(), &loaded).unwrap();
        let a = std::fs::read(dir.path().join("params.bin")).unwrap();
        let b = std::fs::read(dir2.path().join("params.bin")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn adapter_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::tiny(0);
        let adapter: LoraAdapter<f32> = LoraAdapter::init("INFP", &cfg, 4, 8.0, 3);
        save_adapter(dir.path(), &adapter).unwrap();
        let loaded = load_adapter(&dir.path().join("adapter-INFP")).unwrap();
        assert_eq!(adapter, loaded);
    }

    #[test]
    fn truncated_params_bin_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let params: ParameterStore<f32> =
            ParameterStore::init(&ModelConfig::tiny(0)).unwrap();
        save_model(dir.path(), &params).unwrap();
        let path = dir.path().join("params.bin");
        let blob = std::fs::read(&path).unwrap();
        std::fs::write(&path, &blob[..blob.len() - 4]).unwrap();
        assert!(matches!(
            load_model(dir.path()),
            Err(LmError::CorruptCheckpoint { .. })
        ));
    }

    #[test]
    fn list_adapters_scans_directories() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ModelConfig::tiny(0);
        for name in ["INFP", "ESTJ"] {
            let adapter: LoraAdapter<f32> = LoraAdapter::init(name, &cfg, 2, 4.0, 1);
            save_adapter(dir.path(), &adapter).unwrap();
        }
        let found = list_adapters(dir.path()).unwrap();
        let names: Vec<&str> = found.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["ESTJ", "INFP"]);

        let empty = tempfile::tempdir().unwrap();
        assert!(list_adapters(empty.path()).unwrap().is_empty());
    }
}
