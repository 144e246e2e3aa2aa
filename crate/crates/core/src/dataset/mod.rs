//! Dataset families: behavior, self-awareness, and preference pairs.
//!
//! On disk a dataset is a directory holding `manifest.json`, eight
//! attitude-keyed behavior shards (`behavior/E.jsonl` … `behavior/P.jsonl`),
//! per-type self-awareness files (`awareness/<TYPE>.jsonl`), and per-type
//! preference files (`dpo/<TYPE>.jsonl`). Records carry a content-hash id so
//! the two halves of a response pair stay linked across shard shuffling.

pub mod build;
pub mod select;
pub mod stats;
pub mod validate;

pub use build::{
    build_behavior_dataset, build_self_awareness_dataset, load_corpus,
    note_preferences_in_manifest, parse_corpus, write_awareness, write_behavior,
    write_preference_file, CorpusEntry,
};
pub use select::{extract_preference_pairs, select_for_personality};
pub use stats::{composition_stats, rebalance, CompositionStats};
pub use validate::{validate_dataset, ValidationReport, Violation};

use crate::annotator::{AnnotatorError, BackendKind};
use crate::mbti::{Attitude, Dimension, PersonalityType};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// One instruction→response training unit, styled to one attitude.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorRecord {
    /// Content hash of (instruction, input); the pairing key.
    pub id: String,
    pub instruction: String,
    pub input: String,
    pub dimension: Dimension,
    pub attitude: Attitude,
    pub response: String,
}

/// One personality Q&A unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfAwarenessRecord {
    pub personality: PersonalityType,
    pub question: String,
    pub answer: String,
}

/// One DPO training unit: the prompt with the preferred and dispreferred
/// responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub id: String,
    pub prompt: String,
    pub chosen: String,
    pub rejected: String,
    pub dimension: Dimension,
    pub preferred_attitude: Attitude,
}

/// Dataset description written as `manifest.json`. Counts must match the
/// physical record files exactly; `validate` enforces this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Behavior record count per attitude letter.
    pub behavior_records: BTreeMap<String, u64>,
    /// Self-awareness record count per type code.
    pub awareness_records: BTreeMap<String, u64>,
    /// Preference record count per type code.
    pub preference_records: BTreeMap<String, u64>,
    /// Instructions skipped because annotation replies stayed malformed.
    pub flagged_instructions: u64,
    pub backend: BackendKind,
    pub seed: u64,
    /// Unix seconds; honors `SOURCE_DATE_EPOCH` for reproducible builds.
    pub created_unix: u64,
    pub source_corpus: String,
}

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

impl DatasetManifest {
    pub fn empty(backend: BackendKind, seed: u64, source_corpus: &str) -> Self {
        DatasetManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            behavior_records: BTreeMap::new(),
            awareness_records: BTreeMap::new(),
            preference_records: BTreeMap::new(),
            flagged_instructions: 0,
            backend,
            seed,
            created_unix: creation_time(),
            source_corpus: source_corpus.to_string(),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let path = dir.join("manifest.json");
        let bytes = fs::read(&path)?;
        serde_json::from_slice(&bytes).map_err(|e| DatasetError::Corrupt {
            file: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<(), DatasetError> {
        fs::create_dir_all(dir)?;
        let mut body = serde_json::to_vec_pretty(self).expect("manifest serializes");
        body.push(b'\n');
        fs::write(dir.join("manifest.json"), body)?;
        Ok(())
    }
}

fn creation_time() -> u64 {
    if let Ok(epoch) = std::env::var("SOURCE_DATE_EPOCH") {
        if let Ok(v) = epoch.trim().parse() {
            return v;
        }
    }
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// In-memory behavior dataset: one record list per attitude, always all
/// eight shards.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BehaviorDataset {
    shards: BTreeMap<Attitude, Vec<BehaviorRecord>>,
}

impl BehaviorDataset {
    pub fn new() -> Self {
        let mut shards = BTreeMap::new();
        for a in Attitude::ALL {
            shards.insert(a, Vec::new());
        }
        BehaviorDataset { shards }
    }

    pub fn shard(&self, attitude: Attitude) -> &[BehaviorRecord] {
        self.shards.get(&attitude).map(|v| v.as_slice()).unwrap_or(&[])
    }

    pub fn push(&mut self, record: BehaviorRecord) {
        self.shards.entry(record.attitude).or_default().push(record);
    }

    /// Records across all shards, in canonical shard order.
    pub fn iter(&self) -> impl Iterator<Item = &BehaviorRecord> {
        Attitude::ALL.into_iter().flat_map(|a| self.shard(a).iter())
    }

    pub fn total_records(&self) -> usize {
        Attitude::ALL.iter().map(|&a| self.shard(a).len()).sum()
    }

    /// Distinct instruction ids in first-occurrence order (canonical shard
    /// iteration).
    pub fn instruction_ids(&self) -> Vec<String> {
        let mut seen = std::collections::HashSet::new();
        let mut out = Vec::new();
        for r in self.iter() {
            if seen.insert(r.id.clone()) {
                out.push(r.id.clone());
            }
        }
        out
    }

    /// Loads the eight shards from `dir/behavior/`.
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let mut ds = BehaviorDataset::new();
        for a in Attitude::ALL {
            let path = shard_path(dir, a);
            if !path.exists() {
                return Err(DatasetError::MissingShard { attitude: a, path });
            }
            let file = fs::File::open(&path)?;
            for (lineno, line) in BufReader::new(file).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record: BehaviorRecord =
                    serde_json::from_str(&line).map_err(|e| DatasetError::Corrupt {
                        file: format!("{}:{}", path.display(), lineno + 1),
                        message: e.to_string(),
                    })?;
                ds.shards.get_mut(&a).expect("all shards present").push(record);
            }
        }
        Ok(ds)
    }
}

pub(crate) fn shard_path(dir: &Path, attitude: Attitude) -> PathBuf {
    dir.join("behavior").join(format!("{}.jsonl", attitude.letter()))
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), DatasetError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut file, r).expect("record serializes");
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Errors from dataset construction and access.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("missing behavior shard {attitude} at {path}")]
    MissingShard { attitude: Attitude, path: PathBuf },
    #[error("instruction {id} ({instruction:?}) is missing one side of its response pair")]
    UnpairedRecord { id: String, instruction: String },
    #[error("target ratios are unachievable: {reason}")]
    UnachievableRatios { reason: String },
    #[error("invalid target ratios: {reason}")]
    InvalidRatios { reason: String },
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("{file}: {message}")]
    Corrupt { file: String, message: String },
    #[error(transparent)]
    Annotator(#[from] AnnotatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
