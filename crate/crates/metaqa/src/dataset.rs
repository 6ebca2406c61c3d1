//! QA dataset loading, validation, filtering, and deterministic sampling.
//!
//! Datasets are line-oriented UTF-8: one JSON record per line with the
//! field names of [`QaRecord`]. The format covers plain QA sets as well as
//! enhanced records carrying post-hoc `new_answers` and a verification URL.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum Source {
    TruthfulqaEnhanced,
    Hotpotqa,
    Freshqa,
    #[default]
    Custom,
}

/// One dataset question with its reference answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_answer: Option<String>,
    pub correct_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub new_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verification_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default)]
    pub source: Source,
}

impl QaRecord {
    /// All reference answers the labeler may compare against: the curated
    /// correct answers followed by any post-hoc additions.
    pub fn all_references(&self) -> Vec<String> {
        let mut refs = self.correct_answers.clone();
        refs.extend(self.new_answers.iter().cloned());
        refs
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path} line {line}: {reason}")]
    Parse {
        path: String,
        line: usize,
        reason: String,
    },
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("sample size {k} exceeds record count {n}")]
    SampleTooLarge { k: usize, n: usize },
    #[error("dataset {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Result of a load: validated records plus how many lines were skipped for
/// having no reference answers.
#[derive(Debug)]
pub struct LoadOutcome {
    pub records: Vec<QaRecord>,
    pub skipped_no_answers: usize,
}

pub fn load(path: &Path) -> Result<LoadOutcome, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_str(&text, &path.display().to_string())
}

pub fn load_str(text: &str, origin: &str) -> Result<LoadOutcome, DatasetError> {
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    let mut skipped = 0;
    for (line_index, line) in text.lines().enumerate() {
        let line_number = line_index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: QaRecord = serde_json::from_str(line).map_err(|e| DatasetError::Parse {
            path: origin.to_string(),
            line: line_number,
            reason: e.to_string(),
        })?;
        if record.id.is_empty() {
            return Err(DatasetError::Parse {
                path: origin.to_string(),
                line: line_number,
                reason: "empty id".into(),
            });
        }
        if record.question.trim().is_empty() {
            return Err(DatasetError::Parse {
                path: origin.to_string(),
                line: line_number,
                reason: "empty question".into(),
            });
        }
        if !ids.insert(record.id.clone()) {
            return Err(DatasetError::DuplicateId(record.id));
        }
        if record.correct_answers.iter().all(|a| a.trim().is_empty()) {
            log::warn!(
                "{origin} line {line_number}: record `{}` has no reference answers, skipping",
                record.id
            );
            skipped += 1;
            continue;
        }
        records.push(record);
    }
    Ok(LoadOutcome {
        records,
        skipped_no_answers: skipped,
    })
}

/// Serializes records back to the line-oriented format.
pub fn to_jsonl(records: &[QaRecord]) -> String {
    let mut out = String::new();
    for record in records {
        out.push_str(&serde_json::to_string(record).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_records(path: &Path, records: &[QaRecord]) -> Result<(), DatasetError> {
    std::fs::write(path, to_jsonl(records)).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Order-preserving subset of records whose category is in `categories`.
/// Records without a category are excluded.
pub fn filter_by_category(records: &[QaRecord], categories: &BTreeSet<String>) -> Vec<QaRecord> {
    records
        .iter()
        .filter(|r| r.category.as_ref().is_some_and(|c| categories.contains(c)))
        .cloned()
        .collect()
}

/// Deterministic sample of `k` records without replacement; the same seed
/// always selects the same subset. Selected records keep dataset order.
pub fn sample(records: &[QaRecord], k: usize, seed: u64) -> Result<Vec<QaRecord>, DatasetError> {
    if k > records.len() {
        return Err(DatasetError::SampleTooLarge {
            k,
            n: records.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = (0..records.len()).collect();
    indices.shuffle(&mut rng);
    let mut chosen: Vec<usize> = indices.into_iter().take(k).collect();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| records[i].clone()).collect())
}

/// Sample size for a fractional protocol, rounded to the nearest integer
/// (0.10 of 1582 records is 158).
pub fn fraction_k(n: usize, fraction: f64) -> usize {
    (fraction * n as f64).round() as usize
}
