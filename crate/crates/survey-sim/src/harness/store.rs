//! Append-only JSONL record store, sharded per (dataset, model), with a
//! resume index built by scanning the shards at startup.

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::FinishReason;
use crate::methods::{MethodId, Prediction};
use crate::survey::ScaleVariant;
use crate::token_map::Validity;

use super::spec::{GridDecoding, SimulationSpec};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store I/O failure at {path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt record in {path} line {line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

/// One persisted (cell, respondent) outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    /// Stable resume key: hash of the simulation specification plus the
    /// respondent id.
    pub key: String,
    pub dataset: String,
    pub question: String,
    pub method: MethodId,
    pub model: String,
    pub variant: ScaleVariant,
    pub decoding: GridDecoding,
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<u32>,
    pub respondent: String,
    pub raw_output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_text: Option<String>,
    pub prediction: Prediction,
    pub validity: Validity,
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub degraded: bool,
    pub elapsed_ms: u64,
}

impl RunRecord {
    pub fn spec(&self) -> SimulationSpec {
        SimulationSpec {
            dataset: self.dataset.clone(),
            question: self.question.clone(),
            method: self.method,
            model: self.model.clone(),
            variant: self.variant,
            decoding: self.decoding,
            temperature: self.temperature,
            top_k: self.top_k,
        }
    }

    pub fn spec_key(&self) -> String {
        self.spec().key()
    }
}

/// Append-only store. Writes to one shard are serialized; the resume index
/// answers `contains` without re-reading files.
pub struct RecordStore {
    dir: PathBuf,
    writers: Mutex<HashMap<String, BufWriter<File>>>,
    completed: Mutex<HashSet<String>>,
}

fn sanitize(part: &str) -> String {
    part.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

impl RecordStore {
    /// Opens (creating if needed) a store directory and scans existing
    /// shards to build the resume index.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        std::fs::create_dir_all(dir).map_err(|e| StoreError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        let mut completed = HashSet::new();
        let entries = std::fs::read_dir(dir).map_err(|e| StoreError::Io {
            path: dir.display().to_string(),
            message: e.to_string(),
        })?;
        for entry in entries {
            let entry = entry.map_err(|e| StoreError::Io {
                path: dir.display().to_string(),
                message: e.to_string(),
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("jsonl") {
                continue;
            }
            for (line_no, line) in read_lines(&path)?.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let value: serde_json::Value =
                    serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                        path: path.display().to_string(),
                        line: line_no + 1,
                        message: e.to_string(),
                    })?;
                if let Some(key) = value.get("key").and_then(serde_json::Value::as_str) {
                    completed.insert(key.to_string());
                }
            }
        }
        Ok(RecordStore {
            dir: dir.to_path_buf(),
            writers: Mutex::new(HashMap::new()),
            completed: Mutex::new(completed),
        })
    }

    pub fn contains(&self, key: &str) -> bool {
        self.completed.lock().unwrap().contains(key)
    }

    pub fn completed_count(&self) -> usize {
        self.completed.lock().unwrap().len()
    }

    fn shard_name(record: &RunRecord) -> String {
        format!(
            "{}__{}.jsonl",
            sanitize(&record.dataset),
            sanitize(&record.model)
        )
    }

    /// Appends one record to its shard and marks the key complete. The
    /// line is flushed before returning.
    pub fn append(&self, record: &RunRecord) -> Result<(), StoreError> {
        let shard = Self::shard_name(record);
        let line = serde_json::to_string(record).map_err(|e| StoreError::Io {
            path: shard.clone(),
            message: e.to_string(),
        })?;
        let mut writers = self.writers.lock().unwrap();
        let writer = match writers.entry(shard.clone()) {
            std::collections::hash_map::Entry::Occupied(o) => o.into_mut(),
            std::collections::hash_map::Entry::Vacant(v) => {
                let path = self.dir.join(&shard);
                let file = OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(&path)
                    .map_err(|e| StoreError::Io {
                        path: path.display().to_string(),
                        message: e.to_string(),
                    })?;
                v.insert(BufWriter::new(file))
            }
        };
        writeln!(writer, "{line}")
            .and_then(|_| writer.flush())
            .map_err(|e| StoreError::Io {
                path: shard,
                message: e.to_string(),
            })?;
        drop(writers);
        self.completed.lock().unwrap().insert(record.key.clone());
        Ok(())
    }

    /// Reads every record of every shard.
    pub fn load_all(&self) -> Result<Vec<RunRecord>, StoreError> {
        let mut records = Vec::new();
        let mut shards: Vec<PathBuf> = std::fs::read_dir(&self.dir)
            .map_err(|e| StoreError::Io {
                path: self.dir.display().to_string(),
                message: e.to_string(),
            })?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonl"))
            .collect();
        shards.sort();
        for path in shards {
            for (line_no, line) in read_lines(&path)?.into_iter().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let record: RunRecord =
                    serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                        path: path.display().to_string(),
                        line: line_no + 1,
                        message: e.to_string(),
                    })?;
                records.push(record);
            }
        }
        Ok(records)
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>, StoreError> {
    let file = File::open(path).map_err(|e| StoreError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    BufReader::new(file)
        .lines()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| StoreError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(key: &str, respondent: &str) -> RunRecord {
        RunRecord {
            key: key.into(),
            dataset: "d".into(),
            question: "q".into(),
            method: MethodId::RestrictedChoice,
            model: "m".into(),
            variant: ScaleVariant::ALL[0],
            decoding: GridDecoding::Greedy,
            temperature: 0.0,
            top_k: None,
            respondent: respondent.into(),
            raw_output: r#"{"answer_option":"A"}"#.into(),
            reasoning_text: None,
            prediction: Prediction::Choice {
                option_id: "a".into(),
            },
            validity: Validity::Full,
            finish_reason: FinishReason::Stop,
            error: None,
            degraded: false,
            elapsed_ms: 3,
        }
    }

    #[test]
    fn append_then_reload_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        store.append(&record("k1", "r1")).unwrap();
        store.append(&record("k2", "r2")).unwrap();
        let records = store.load_all().unwrap();
        assert_eq!(records.len(), 2);
        assert_eq!(records[0], record("k1", "r1"));
    }

    #[test]
    fn resume_index_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let store = RecordStore::open(dir.path()).unwrap();
            store.append(&record("k1", "r1")).unwrap();
        }
        let reopened = RecordStore::open(dir.path()).unwrap();
        assert!(reopened.contains("k1"));
        assert!(!reopened.contains("k2"));
        assert_eq!(reopened.completed_count(), 1);
    }

    #[test]
    fn shards_split_by_dataset_and_model() {
        let dir = tempfile::tempdir().unwrap();
        let store = RecordStore::open(dir.path()).unwrap();
        let mut other = record("k3", "r1");
        other.model = "other/model".into();
        store.append(&record("k1", "r1")).unwrap();
        store.append(&other).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        names.sort();
        assert_eq!(names, vec!["d__m.jsonl", "d__other_model.jsonl"]);
    }

    #[test]
    fn corrupt_line_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("bad.jsonl"), "not json\n").unwrap();
        assert!(matches!(
            RecordStore::open(dir.path()),
            Err(StoreError::Corrupt { .. })
        ));
    }
}
