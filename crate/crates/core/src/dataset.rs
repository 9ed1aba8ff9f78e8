//! Newline-delimited task datasets and seeded evaluation samples.
//!
//! Each line is a flat JSON object with `id`, `context`, `reference` and, for
//! question answering only, `query`. Unknown fields are rejected.
//!
//! Sampling is a partial Fisher–Yates shuffle driven by ChaCha20
//! (`ChaCha20Rng::seed_from_u64(seed)`); bounded draws use rejection sampling
//! on `next_u64` so the sequence does not depend on any `rand` helper.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::types::TaskKind;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed JSON: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: invalid record: {message}")]
    Schema { line: usize, message: String },
    #[error("line {line}: record `{id}`: field `{field}` is empty")]
    EmptyField {
        line: usize,
        id: String,
        field: &'static str,
    },
    #[error("line {line}: record `{id}`: query not allowed for task {task}")]
    QueryNotAllowed { line: usize, id: String, task: TaskKind },
    #[error("line {line}: record `{id}`: query required for task {task}")]
    QueryMissing { line: usize, id: String, task: TaskKind },
    #[error("line {line}: duplicate record id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("sample size {requested} exceeds the {available} available records")]
    SampleTooLarge { requested: usize, available: usize },
    #[error("sample size must be positive")]
    EmptySample,
}

impl DatasetError {
    /// Line number for errors tied to a single input line.
    pub fn line(&self) -> Option<usize> {
        match self {
            DatasetError::Syntax { line, .. }
            | DatasetError::Schema { line, .. }
            | DatasetError::EmptyField { line, .. }
            | DatasetError::QueryNotAllowed { line, .. }
            | DatasetError::QueryMissing { line, .. }
            | DatasetError::DuplicateId { line, .. } => Some(*line),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    pub context: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<String>,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalSample {
    pub records: Vec<TaskRecord>,
    /// Hex SHA-256 of the canonical serialisation of the source records.
    pub source_digest: String,
    pub seed: u64,
}

impl EvalSample {
    pub fn ids(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn load(path: &Path, task: TaskKind) -> Result<Vec<TaskRecord>, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse(&text, task)
}

/// Parses newline-delimited records. Blank lines are skipped.
pub fn parse(text: &str, task: TaskKind) -> Result<Vec<TaskRecord>, DatasetError> {
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: TaskRecord = serde_json::from_str(raw).map_err(|e| classify(line, e))?;
        validate_record(&record, task, line)?;
        if !seen.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId { line, id: record.id });
        }
        records.push(record);
    }
    Ok(records)
}

fn classify(line: usize, err: serde_json::Error) -> DatasetError {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => DatasetError::Schema {
            line,
            message: err.to_string(),
        },
        _ => DatasetError::Syntax {
            line,
            message: err.to_string(),
        },
    }
}

fn validate_record(record: &TaskRecord, task: TaskKind, line: usize) -> Result<(), DatasetError> {
    let empty = |field| DatasetError::EmptyField {
        line,
        id: record.id.clone(),
        field,
    };
    if record.id.trim().is_empty() {
        return Err(empty("id"));
    }
    if record.context.trim().is_empty() {
        return Err(empty("context"));
    }
    if record.reference.trim().is_empty() {
        return Err(empty("reference"));
    }
    match (&record.query, task.has_query()) {
        (Some(_), false) => Err(DatasetError::QueryNotAllowed {
            line,
            id: record.id.clone(),
            task,
        }),
        (None, true) => Err(DatasetError::QueryMissing {
            line,
            id: record.id.clone(),
            task,
        }),
        (Some(q), true) if q.trim().is_empty() => Err(empty("query")),
        _ => Ok(()),
    }
}

/// Writes records in the same format [`load`] reads.
pub fn to_jsonl(records: &[TaskRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serialises"));
        out.push('\n');
    }
    out
}

pub fn digest(records: &[TaskRecord]) -> String {
    hex::encode(Sha256::digest(to_jsonl(records).as_bytes()))
}

/// Draws `k` distinct records, in shuffle order.
pub fn sample(records: &[TaskRecord], k: usize, seed: u64) -> Result<EvalSample, DatasetError> {
    if k == 0 {
        return Err(DatasetError::EmptySample);
    }
    if k > records.len() {
        return Err(DatasetError::SampleTooLarge {
            requested: k,
            available: records.len(),
        });
    }
    let indices = partial_shuffle(records.len(), k, seed);
    Ok(EvalSample {
        records: indices.into_iter().map(|i| records[i].clone()).collect(),
        source_digest: digest(records),
        seed,
    })
}

/// First `k` positions of a Fisher–Yates shuffle of `0..n`.
fn partial_shuffle(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(&mut rng, (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Unbiased draw from `0..bound` by rejecting the top partial bucket.
fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}
