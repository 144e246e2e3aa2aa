//! Structural validation of a dataset directory.
//!
//! Violations are report entries with file and line positions, never hard
//! errors; only a missing path fails the call itself.

use super::{BehaviorRecord, DatasetManifest, PreferencePair, SelfAwarenessRecord};
use crate::mbti::{Attitude, PersonalityType};
use serde::Serialize;
use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

/// One rule violation at a position.
#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub file: String,
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "{}:{}: {}", self.file, line, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

/// Everything `validate` found.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, file: impl Into<String>, line: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            file: file.into(),
            line,
            message: message.into(),
        });
    }
}

/// Checks every record file against the schema, attitude/dimension
/// consistency, pairing integrity, and manifest-count agreement.
pub fn validate_dataset(dir: &Path) -> std::io::Result<ValidationReport> {
    if !dir.exists() {
        return Err(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("dataset directory {} does not exist", dir.display()),
        ));
    }
    let mut report = ValidationReport::default();

    let manifest = match DatasetManifest::load(dir) {
        Ok(m) => Some(m),
        Err(e) => {
            report.push("manifest.json", None, format!("unreadable manifest: {e}"));
            None
        }
    };

    // Behavior shards: schema, consistency, and pairing.
    let mut pair_index: HashMap<String, Vec<(Attitude, String, String, String)>> = HashMap::new();
    for attitude in Attitude::ALL {
        let rel = format!("behavior/{}.jsonl", attitude.letter());
        let path = dir.join(&rel);
        if !path.exists() {
            report.push(&rel, None, "missing behavior shard");
            continue;
        }
        let mut count = 0u64;
        for (idx, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            count += 1;
            let record: BehaviorRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => {
                    report.push(&rel, Some(lineno), format!("schema: {e}"));
                    continue;
                }
            };
            if record.attitude != attitude {
                report.push(
                    &rel,
                    Some(lineno),
                    format!("record attitude {} does not match shard", record.attitude),
                );
            }
            if record.attitude.dimension() != record.dimension {
                report.push(
                    &rel,
                    Some(lineno),
                    format!(
                        "attitude {} does not belong to dimension {}",
                        record.attitude, record.dimension
                    ),
                );
            }
            if record.response.is_empty() {
                report.push(&rel, Some(lineno), "empty response");
            }
            if record.instruction.is_empty() {
                report.push(&rel, Some(lineno), "empty instruction");
            }
            pair_index.entry(record.id.clone()).or_default().push((
                record.attitude,
                record.instruction.clone(),
                record.input.clone(),
                format!("{rel}:{lineno}"),
            ));
        }
        if let Some(m) = &manifest {
            let declared = m
                .behavior_records
                .get(&attitude.letter().to_string())
                .copied()
                .unwrap_or(0);
            if declared != count {
                report.push(
                    &rel,
                    None,
                    format!("manifest declares {declared} records, file has {count}"),
                );
            }
        }
    }

    for (id, members) in &pair_index {
        match members.as_slice() {
            [a, b] => {
                if a.0 != b.0.opposite() {
                    report.push(
                        &members[0].3,
                        None,
                        format!("pair {id} attitudes {} and {} are not opposites", a.0, b.0),
                    );
                }
                if a.1 != b.1 || a.2 != b.2 {
                    report.push(
                        &members[0].3,
                        None,
                        format!("pair {id} halves disagree on instruction or input"),
                    );
                }
            }
            _ => {
                report.push(
                    &members[0].3,
                    None,
                    format!("instruction {id} has {} records, expected 2", members.len()),
                );
            }
        }
    }

    // Self-awareness files.
    let awareness_dir = dir.join("awareness");
    if awareness_dir.exists() {
        for entry in fs::read_dir(&awareness_dir)? {
            let path = entry?.path();
            if path.extension().map(|e| e != "jsonl").unwrap_or(true) {
                continue;
            }
            let rel = format!(
                "awareness/{}",
                path.file_name().unwrap_or_default().to_string_lossy()
            );
            let stem = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            let expected_type = PersonalityType::parse(&stem).ok();
            if expected_type.is_none() {
                report.push(&rel, None, "file name is not a personality type code");
            }
            let mut count = 0u64;
            for (idx, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
                let line = line?;
                let lineno = idx + 1;
                if line.trim().is_empty() {
                    continue;
                }
                count += 1;
                match serde_json::from_str::<SelfAwarenessRecord>(&line) {
                    Ok(r) => {
                        if let Some(t) = expected_type {
                            if r.personality != t {
                                report.push(
                                    &rel,
                                    Some(lineno),
                                    format!("record type {} does not match file", r.personality),
                                );
                            }
                        }
                        if r.question.is_empty() || r.answer.is_empty() {
                            report.push(&rel, Some(lineno), "empty question or answer");
                        }
                    }
                    Err(e) => report.push(&rel, Some(lineno), format!("schema: {e}")),
                }
            }
            if let (Some(m), Some(t)) = (&manifest, expected_type) {
                let declared = m.awareness_records.get(&t.code()).copied().unwrap_or(0);
                if declared != count {
                    report.push(
                        &rel,
                        None,
                        format!("manifest declares {declared} records, file has {count}"),
                    );
                }
            }
        }
    }

    // Preference files.
    let dpo_dir = dir.join("dpo");
    if dpo_dir.exists() {
        for entry in fs::read_dir(&dpo_dir)? {
            let path = entry?.path();
            if path.extension().map(|e| e != "jsonl").unwrap_or(true) {
                continue;
            }
            let rel = format!("dpo/{}", path.file_name().unwrap_or_default().to_string_lossy());
            let stem = path
                .file_stem()
                .unwrap_or_default()
                .to_string_lossy()
                .to_string();
            let mut count = 0u64;
            for (idx, line) in BufReader::new(fs::File::open(&path)?).lines().enumerate() {
                let line = line?;
                let lineno = idx + 1;
                if line.trim().is_empty() {
                    continue;
                }
                count += 1;
                match serde_json::from_str::<PreferencePair>(&line) {
                    Ok(p) => {
                        if p.preferred_attitude.dimension() != p.dimension {
                            report.push(
                                &rel,
                                Some(lineno),
                                format!(
                                    "preferred attitude {} does not belong to {}",
                                    p.preferred_attitude, p.dimension
                                ),
                            );
                        }
                        if p.chosen == p.rejected {
                            report.push(&rel, Some(lineno), "chosen equals rejected");
                        }
                    }
                    Err(e) => report.push(&rel, Some(lineno), format!("schema: {e}")),
                }
            }
            if let Some(m) = &manifest {
                if let Some(&declared) = m.preference_records.get(&stem) {
                    if declared != count {
                        report.push(
                            &rel,
                            None,
                            format!("manifest declares {declared} records, file has {count}"),
                        );
                    }
                }
            }
        }
    }

    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{Annotator, BackendConfig};
    use crate::assets::SAMPLE_CORPUS;
    use crate::dataset::build::{build_behavior_dataset, parse_corpus, write_behavior};

    fn built_dir() -> tempfile::TempDir {
        let corpus = parse_corpus(SAMPLE_CORPUS).unwrap();
        let annotator =
            Annotator::new(BackendConfig::mock(0), crate::prompt::TemplateSet::embedded())
                .unwrap();
        let (ds, manifest) = build_behavior_dataset(&corpus, &annotator, "sample").unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_behavior(dir.path(), &ds, &manifest).unwrap();
        dir
    }

    #[test]
    fn fresh_mock_dataset_is_clean() {
        let dir = built_dir();
        let report = validate_dataset(dir.path()).unwrap();
        assert!(report.is_clean(), "violations: {:?}", report.violations);
    }

    #[test]
    fn attitude_dimension_mismatch_is_one_violation() {
        let dir = built_dir();
        let path = dir.path().join("behavior/T.jsonl");
        let body = fs::read_to_string(&path).unwrap();
        // Rewrite the first record's dimension to energy: T does not belong.
        let mut lines: Vec<String> = body.lines().map(String::from).collect();
        lines[0] = lines[0].replace("\"dimension\":\"decision\"", "\"dimension\":\"energy\"");
        fs::write(&path, lines.join("\n") + "\n").unwrap();

        let report = validate_dataset(dir.path()).unwrap();
        let consistency: Vec<&Violation> = report
            .violations
            .iter()
            .filter(|v| v.message.contains("does not belong to dimension"))
            .collect();
        assert_eq!(consistency.len(), 1);
        // The edit also desynchronizes the pair's dimension bookkeeping; the
        // single consistency violation above is the contract under test.
    }

    #[test]
    fn manifest_count_mismatch_is_reported() {
        let dir = built_dir();
        let mut manifest = DatasetManifest::load(dir.path()).unwrap();
        let e = manifest.behavior_records.get_mut("E").unwrap();
        *e += 1;
        manifest.save(dir.path()).unwrap();
        let report = validate_dataset(dir.path()).unwrap();
        assert_eq!(
            report
                .violations
                .iter()
                .filter(|v| v.message.contains("manifest declares"))
                .count(),
            1
        );
    }

    #[test]
    fn missing_directory_is_an_io_error() {
        assert!(validate_dataset(Path::new("/nonexistent/nope")).is_err());
    }
}
