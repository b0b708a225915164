//! Bit-stable persistence: task corpora, enriched trajectory datasets and
//! run manifests.
//!
//! Dataset files are JSONL with a version header line; corpus files are one
//! task per line. Writes go through a temp file and rename so failures never
//! leave partial artifacts. Record order inside a dataset is deterministic:
//! task id, then total return descending, then token-sequence order.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashes::sha256_hex;
use crate::search::TrajectoryRecord;
use crate::task::TaskInstance;

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Writes bytes to `path` via a temporary sibling plus rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(parent).map_err(|e| Error::io(parent.display().to_string(), e))?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.write_all(bytes)
            .map_err(|e| Error::io(tmp.display().to_string(), e))?;
        f.sync_all().ok();
    }
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetHeader {
    schema_version: u32,
    kind: String,
}

/// Provenance recorded next to every dataset.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ManifestMeta {
    pub method: String,
    pub config_hash: String,
    pub corpus_hash: String,
    pub policy_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub record_count: usize,
    pub content_hash: String,
    pub method: String,
    pub config_hash: String,
    pub corpus_hash: String,
    pub policy_hash: String,
}

pub fn manifest_path(dataset_path: &Path) -> std::path::PathBuf {
    let mut name = dataset_path
        .file_name()
        .map(|n| n.to_string_lossy().to_string())
        .unwrap_or_default();
    name.push_str(".manifest.json");
    dataset_path.with_file_name(name)
}

/// Validates, orders and writes records; returns the manifest (also written
/// next to the dataset). Nothing is written if any record fails validation.
pub fn write_dataset(
    records: &[TrajectoryRecord],
    path: &Path,
    meta: &ManifestMeta,
) -> Result<DatasetManifest> {
    for rec in records {
        rec.validate()?;
    }
    let mut ordered: Vec<&TrajectoryRecord> = records.iter().collect();
    ordered.sort_by(|a, b| {
        a.task_id
            .cmp(&b.task_id)
            .then(
                b.total_return()
                    .partial_cmp(&a.total_return())
                    .unwrap_or(std::cmp::Ordering::Equal),
            )
            .then_with(|| a.flat_tokens().cmp(&b.flat_tokens()))
    });

    let mut buf = Vec::new();
    let header = DatasetHeader {
        schema_version: DATASET_SCHEMA_VERSION,
        kind: "trajectories".to_string(),
    };
    writeln!(buf, "{}", serde_json::to_string(&header).expect("header json")).expect("vec write");
    for rec in ordered {
        writeln!(buf, "{}", serde_json::to_string(rec).expect("record json")).expect("vec write");
    }
    write_atomic(path, &buf)?;

    let manifest = DatasetManifest {
        schema_version: DATASET_SCHEMA_VERSION,
        record_count: records.len(),
        content_hash: sha256_hex(&buf),
        method: meta.method.clone(),
        config_hash: meta.config_hash.clone(),
        corpus_hash: meta.corpus_hash.clone(),
        policy_hash: meta.policy_hash.clone(),
    };
    let manifest_bytes = serde_json::to_vec_pretty(&manifest).expect("manifest json");
    write_atomic(&manifest_path(path), &manifest_bytes)?;
    Ok(manifest)
}

/// Reads a dataset strictly: unknown fields, malformed lines and version
/// mismatches are errors naming the offending line.
pub fn read_dataset(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut lines = reader.lines().enumerate();

    let (_, header_line) = lines
        .next()
        .ok_or_else(|| Error::validation(format!("{}: empty dataset", path.display())))?;
    let header_line = header_line.map_err(|e| Error::io(path.display().to_string(), e))?;
    let header: DatasetHeader = serde_json::from_str(&header_line).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })?;
    if header.schema_version != DATASET_SCHEMA_VERSION {
        return Err(Error::VersionMismatch {
            found: header.schema_version,
            expected: DATASET_SCHEMA_VERSION,
        });
    }

    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let record: TrajectoryRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        record.validate().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: e.to_string(),
    })
}

/// Writes the task corpus: one task per line, field order fixed.
pub fn write_tasks(tasks: &[TaskInstance], path: &Path) -> Result<String> {
    for t in tasks {
        t.validate()?;
    }
    let mut buf = Vec::new();
    for t in tasks {
        writeln!(buf, "{}", serde_json::to_string(t).expect("task json")).expect("vec write");
    }
    write_atomic(path, &buf)?;
    Ok(sha256_hex(&buf))
}

pub fn read_tasks(path: &Path) -> Result<Vec<TaskInstance>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut tasks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        let task: TaskInstance = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        task.validate().map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        tasks.push(task);
    }
    Ok(tasks)
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(sha256_hex(&bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{SearchMeta, TrajectoryStep};
    use crate::vocab::{AnswerKey, Token, ANSWER, SEP};

    fn record(task_id: &str, norm: &[f64], r_out: u8) -> TrajectoryRecord {
        TrajectoryRecord {
            task_id: task_id.to_string(),
            steps: norm
                .iter()
                .map(|&n| TrajectoryStep {
                    tokens: vec![ANSWER, Token(4), SEP],
                    r_prog_raw: n,
                    r_prog_normalized: n,
                })
                .collect(),
            r_out,
            final_answer: AnswerKey::from_raw("4"),
            search_meta: SearchMeta::external(1),
        }
    }

    #[test]
    fn round_trip_and_stable_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![record("t1", &[0.5, -0.5], 1), record("t0", &[1.0], 0)];
        let meta = ManifestMeta::default();
        let m1 = write_dataset(&records, &path, &meta).unwrap();
        let loaded = read_dataset(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        // Sorted by task id.
        assert_eq!(loaded[0].task_id, "t0");
        let m2 = write_dataset(&records, &path, &meta).unwrap();
        assert_eq!(m1.content_hash, m2.content_hash);
    }

    #[test]
    fn invalid_record_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let bad = record("t0", &[0.9, 0.9], 0);
        let err = write_dataset(&[bad], &path, &ManifestMeta::default()).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(!path.exists());
    }

    #[test]
    fn truncated_line_names_its_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![record("t0", &[1.0], 1)];
        write_dataset(&records, &path, &ManifestMeta::default()).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.truncate(text.len() - 10);
        std::fs::write(&path, text).unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        std::fs::write(&path, "{\"schema_version\":0,\"kind\":\"trajectories\"}\n").unwrap();
        match read_dataset(&path).unwrap_err() {
            Error::VersionMismatch { found, .. } => assert_eq!(found, 0),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn unknown_field_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        let records = vec![record("t0", &[1.0], 1)];
        write_dataset(&records, &path, &ManifestMeta::default()).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replace("\"task_id\":\"t0\"", "\"task_id\":\"t0\",\"bogus\":3");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            read_dataset(&path).unwrap_err(),
            Error::Parse { .. }
        ));
    }

    #[test]
    fn corpus_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let tasks = crate::task::generate_tasks(7, 6, 0.5).unwrap();
        let h1 = write_tasks(&tasks, &path).unwrap();
        let loaded = read_tasks(&path).unwrap();
        assert_eq!(tasks, loaded);
        let h2 = write_tasks(&loaded, &path).unwrap();
        assert_eq!(h1, h2);
    }
}
