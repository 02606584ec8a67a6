//! JSONL record schemas and line-oriented readers/writers.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use kgpf_core::paths::{KgPath, Note, PathLabel, PathSet};
use kgpf_core::KnowledgeGraph;

use crate::fsutil::write_atomic;

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

/// One path per line: note provenance, the rendered path string, its
/// label, and start/terminal cuis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecord {
    pub note_id: String,
    pub path: String,
    pub label: PathLabel,
    pub hops: usize,
    pub start_cui: String,
    pub terminal_cui: String,
}

impl PathRecord {
    pub fn from_path(graph: &KnowledgeGraph, path: &KgPath) -> Result<PathRecord, String> {
        let rendered =
            kgpf_core::paths::format_path(graph, &path.steps).map_err(|e| e.to_string())?;
        Ok(PathRecord {
            note_id: path.note_id.clone(),
            path: rendered,
            label: path.label,
            hops: path.steps.hops(),
            start_cui: path.steps.start().to_string(),
            terminal_cui: path.steps.terminal().to_string(),
        })
    }
}

/// Records for one path set, positives first, in build order.
pub fn pathset_records(
    graph: &KnowledgeGraph,
    set: &PathSet,
) -> Result<Vec<PathRecord>, String> {
    let mut records = Vec::with_capacity(set.total());
    for path in set.positives.iter().chain(&set.negatives) {
        records.push(PathRecord::from_path(graph, path)?);
    }
    Ok(records)
}

/// One model prediction keyed by dataset line index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub index: usize,
    pub prediction: String,
}

/// Evaluation report surface, scores reported x100.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub metric: String,
    pub corpus_f1: f64,
    pub corpus_precision: f64,
    pub corpus_recall: f64,
    pub n: usize,
    pub n_malformed: usize,
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, JsonlError> {
    let text = std::fs::read_to_string(path).map_err(|source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let item = serde_json::from_str(line).map_err(|e| JsonlError::Line {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(item);
    }
    Ok(out)
}

/// Serializes one item per line and writes atomically; returns the
/// number of lines written.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<usize, JsonlError> {
    let mut buf = Vec::new();
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| JsonlError::Line {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    write_atomic(path, &buf).map_err(|source| JsonlError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(items.len())
}

pub fn read_notes(path: &Path) -> Result<Vec<Note>, JsonlError> {
    read_jsonl(path)
}
