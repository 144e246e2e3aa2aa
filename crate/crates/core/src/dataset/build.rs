//! Dataset construction from an instruction corpus.

use super::{
    shard_path, write_jsonl, BehaviorDataset, BehaviorRecord, DatasetError, DatasetManifest,
    SelfAwarenessRecord, MANIFEST_SCHEMA_VERSION,
};
use crate::annotator::Annotator;
use crate::mbti::PersonalityType;
use crate::util::content_id;
use std::fs;
use std::io::BufRead;
use std::path::Path;

/// One source-corpus entry. The corpus is any JSONL of
/// `{instruction, input, output}`; `output` is ignored.
#[derive(Debug, Clone, serde::Deserialize)]
pub struct CorpusEntry {
    pub instruction: String,
    #[serde(default)]
    pub input: String,
}

/// Loads a JSONL corpus file.
pub fn load_corpus(path: &Path) -> Result<Vec<CorpusEntry>, DatasetError> {
    let file = fs::File::open(path)?;
    let mut out = Vec::new();
    for (lineno, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = serde_json::from_str(&line).map_err(|e| DatasetError::Corrupt {
            file: format!("{}:{}", path.display(), lineno + 1),
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Parses an in-memory JSONL corpus (e.g. the shipped sample corpus).
pub fn parse_corpus(jsonl: &str) -> Result<Vec<CorpusEntry>, DatasetError> {
    let mut out = Vec::new();
    for (lineno, line) in jsonl.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: CorpusEntry = serde_json::from_str(line).map_err(|e| DatasetError::Corrupt {
            file: format!("<corpus>:{}", lineno + 1),
            message: e.to_string(),
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Classifies every instruction and generates its attitude pair, producing
/// two behavior records per instruction (one per attitude of its
/// dimension). Instructions whose annotation stays malformed are skipped and
/// counted in the manifest; an unreachable backend aborts the build.
pub fn build_behavior_dataset(
    corpus: &[CorpusEntry],
    annotator: &Annotator,
    source_corpus: &str,
) -> Result<(BehaviorDataset, DatasetManifest), DatasetError> {
    if corpus.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let instructions: Vec<String> = corpus.iter().map(|e| e.instruction.clone()).collect();
    let outcomes = annotator.annotate_instructions(&instructions)?;

    let mut dataset = BehaviorDataset::new();
    let mut flagged = 0u64;
    for (entry, outcome) in corpus.iter().zip(outcomes) {
        let Some(annotation) = outcome.payload else {
            flagged += 1;
            continue;
        };
        let id = content_id(&[&entry.instruction, &entry.input]);
        let (first, second) = annotation.dimension.attitudes();
        for (attitude, response) in [
            (first, annotation.response_first),
            (second, annotation.response_second),
        ] {
            dataset.push(BehaviorRecord {
                id: id.clone(),
                instruction: entry.instruction.clone(),
                input: entry.input.clone(),
                dimension: annotation.dimension,
                attitude,
                response,
            });
        }
    }

    let mut manifest = DatasetManifest::empty(
        annotator.config().kind,
        annotator.config().seed,
        source_corpus,
    );
    manifest.flagged_instructions = flagged;
    for a in crate::mbti::Attitude::ALL {
        manifest
            .behavior_records
            .insert(a.letter().to_string(), dataset.shard(a).len() as u64);
    }
    Ok((dataset, manifest))
}

/// Generates `n` self-awareness records for one personality type.
pub fn build_self_awareness_dataset(
    personality: PersonalityType,
    n: usize,
    annotator: &Annotator,
) -> Result<Vec<SelfAwarenessRecord>, DatasetError> {
    if n < 1 {
        return Err(DatasetError::InvalidCount(
            "self-awareness count must be at least 1".into(),
        ));
    }
    let qa = annotator.generate_self_awareness_qa(personality, n)?;
    Ok(qa
        .into_iter()
        .map(|(question, answer)| SelfAwarenessRecord {
            personality,
            question,
            answer,
        })
        .collect())
}

/// Writes the eight behavior shards plus the manifest into `dir`. On
/// failure, files created by this call are removed.
pub fn write_behavior(
    dir: &Path,
    dataset: &BehaviorDataset,
    manifest: &DatasetManifest,
) -> Result<(), DatasetError> {
    let mut created = Vec::new();
    let result = (|| {
        for a in crate::mbti::Attitude::ALL {
            let path = shard_path(dir, a);
            write_jsonl(&path, dataset.shard(a))?;
            created.push(path);
        }
        manifest.save(dir)?;
        created.push(dir.join("manifest.json"));
        Ok(())
    })();
    if result.is_err() {
        for path in &created {
            let _ = fs::remove_file(path);
        }
    }
    result
}

/// Writes `awareness/<TYPE>.jsonl` and updates (or creates) the manifest so
/// counts keep matching the physical files.
pub fn write_awareness(
    dir: &Path,
    personality: PersonalityType,
    records: &[SelfAwarenessRecord],
    backend: crate::annotator::BackendKind,
    seed: u64,
) -> Result<(), DatasetError> {
    let path = dir.join("awareness").join(format!("{}.jsonl", personality.code()));
    write_jsonl(&path, records)?;
    let mut manifest = DatasetManifest::load(dir).unwrap_or_else(|_| {
        let mut m = DatasetManifest::empty(backend, seed, "");
        m.schema_version = MANIFEST_SCHEMA_VERSION;
        m
    });
    manifest
        .awareness_records
        .insert(personality.code(), records.len() as u64);
    manifest.save(dir)
}

/// Writes a preference-pair JSONL file. When the file lands in a dataset's
/// `dpo/` directory, the caller should also update that dataset's manifest
/// via [`note_preferences_in_manifest`].
pub fn write_preference_file(
    path: &Path,
    pairs: &[super::PreferencePair],
) -> Result<(), DatasetError> {
    write_jsonl(path, pairs)
}

/// Records a preference file's count in the dataset manifest.
pub fn note_preferences_in_manifest(
    dir: &Path,
    personality: PersonalityType,
    count: u64,
) -> Result<(), DatasetError> {
    let mut manifest = DatasetManifest::load(dir)?;
    manifest.preference_records.insert(personality.code(), count);
    manifest.save(dir)
}
