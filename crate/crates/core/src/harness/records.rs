//! Trial records as JSON Lines. Every line carries its schema version so
//! files can be appended to and resumed.

use std::collections::HashSet;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::controller::{Paradigm, RunResult, TerminatedBy};

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrialKey {
    pub case_name: String,
    pub paradigm: Paradigm,
    pub trial_index: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub schema_version: u32,
    pub case_name: String,
    pub paradigm: Paradigm,
    pub trial_index: u32,
    pub syntax_ok: bool,
    pub functional_ok: bool,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub llm_calls: u32,
    #[serde(with = "crate::tree::duration_secs")]
    pub wall_time: Duration,
    pub terminated_by: TerminatedBy,
    #[serde(default)]
    pub verdict_disagreement: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl TrialRecord {
    pub fn from_result(key: &TrialKey, r: &RunResult) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            case_name: key.case_name.clone(),
            paradigm: key.paradigm,
            trial_index: key.trial_index,
            syntax_ok: r.syntax_ok,
            functional_ok: r.functional_ok && r.syntax_ok,
            prompt_tokens: r.totals.prompt,
            completion_tokens: r.totals.completion,
            llm_calls: r.llm_calls,
            wall_time: r.wall_time,
            terminated_by: r.terminated_by,
            verdict_disagreement: r.verdict_disagreement,
            error: r.error.clone(),
        }
    }

    /// A trial that never produced a run result, e.g. a missing transcript.
    pub fn failed(key: &TrialKey, error: String) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            case_name: key.case_name.clone(),
            paradigm: key.paradigm,
            trial_index: key.trial_index,
            syntax_ok: false,
            functional_ok: false,
            prompt_tokens: 0,
            completion_tokens: 0,
            llm_calls: 0,
            wall_time: Duration::ZERO,
            terminated_by: TerminatedBy::OperatorFailure,
            verdict_disagreement: false,
            error: Some(error),
        }
    }

    pub fn key(&self) -> TrialKey {
        TrialKey { case_name: self.case_name.clone(), paradigm: self.paradigm, trial_index: self.trial_index }
    }

    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

pub fn to_jsonl(records: &[TrialRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

/// The JSONL form with timing fields zeroed, for run-to-run comparison.
pub fn canonical_jsonl(records: &[TrialRecord]) -> String {
    let stripped: Vec<TrialRecord> =
        records.iter().map(|r| TrialRecord { wall_time: Duration::ZERO, ..r.clone() }).collect();
    to_jsonl(&stripped)
}

#[derive(Debug, thiserror::Error)]
pub enum RecordsError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {detail}")]
    Parse { path: PathBuf, line: usize, detail: String },
}

/// Reads a records file. A JSON array is accepted as well as JSON Lines.
/// A truncated final line, as left by an interrupted run, is ignored.
pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>, RecordsError> {
    let text = fs::read_to_string(path).map_err(|source| RecordsError::Io { path: path.into(), source })?;
    if text.trim_start().starts_with('[') {
        return serde_json::from_str(&text)
            .map_err(|e| RecordsError::Parse { path: path.into(), line: 1, detail: e.to_string() });
    }
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        match serde_json::from_str::<TrialRecord>(line) {
            Ok(r) if r.schema_version == RECORD_SCHEMA_VERSION => out.push(r),
            Ok(r) => {
                return Err(RecordsError::Parse {
                    path: path.into(),
                    line: i + 1,
                    detail: format!("unsupported schema_version {}", r.schema_version),
                })
            }
            Err(_) if i + 1 == lines.len() && !text.ends_with('\n') => break,
            Err(e) => return Err(RecordsError::Parse { path: path.into(), line: i + 1, detail: e.to_string() }),
        }
    }
    Ok(out)
}

/// Append-only record file; each record is written and flushed as one line.
pub struct RecordSink {
    path: PathBuf,
    file: Mutex<File>,
    done: HashSet<TrialKey>,
    existing: Vec<TrialRecord>,
}

impl RecordSink {
    /// Opens `path` for appending, loading any records already present so
    /// their trials can be skipped.
    pub fn open(path: &Path) -> Result<Self, RecordsError> {
        let io_err = |source| RecordsError::Io { path: path.into(), source };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err)?;
        }
        let existing = if path.exists() { read_records(path)? } else { Vec::new() };
        // Drop a torn trailing line before appending after it.
        fs::write(path, to_jsonl(&existing)).map_err(io_err)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io_err)?;
        Ok(Self {
            path: path.into(),
            file: Mutex::new(file),
            done: existing.iter().map(TrialRecord::key).collect(),
            existing,
        })
    }

    pub fn is_done(&self, key: &TrialKey) -> bool {
        self.done.contains(key)
    }

    pub fn existing(&self) -> &[TrialRecord] {
        &self.existing
    }

    pub fn append(&self, record: &TrialRecord) -> Result<(), RecordsError> {
        let line = serde_json::to_string(record).expect("records serialize") + "\n";
        let mut f = self.file.lock().expect("sink poisoned");
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|source| RecordsError::Io { path: self.path.clone(), source })
    }

    /// Replaces the file with `records` in the given order.
    pub fn rewrite(&self, records: &[TrialRecord]) -> Result<(), RecordsError> {
        let _guard = self.file.lock().expect("sink poisoned");
        let tmp = self.path.with_extension("jsonl.tmp");
        let io_err = |source| RecordsError::Io { path: self.path.clone(), source };
        fs::write(&tmp, to_jsonl(records)).map_err(io_err)?;
        fs::rename(&tmp, &self.path).map_err(io_err)
    }
}
