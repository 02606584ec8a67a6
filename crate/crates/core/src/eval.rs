//! Scoring: ROUGE-1 and ROUGE-L F-measures, exact match, the graph
//! validity oracle for path strings, and a non-neural lexical baseline
//! judge for the selection tasks.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::paths::{parse_path_names, PathParseError};
use crate::tasks::{TaskInstance, TaskKind};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn zero() -> Self {
        RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }

    fn from_counts(matches: usize, cand_len: usize, ref_len: usize) -> Self {
        if cand_len == 0 || ref_len == 0 {
            return RougeScore::zero();
        }
        let precision = matches as f64 / cand_len as f64;
        let recall = matches as f64 / ref_len as f64;
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

/// Lowercased maximal alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            for lc in ch.to_lowercase() {
                current.push(lc);
            }
        } else if !current.is_empty() {
            tokens.push(core::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Unigram overlap with clipped counts. Empty-vs-empty scores zero.
pub fn rouge_1(candidate: &str, reference: &str) -> RougeScore {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    if cand.is_empty() || reference.is_empty() {
        return RougeScore::zero();
    }
    let mut ref_counts: alloc::collections::BTreeMap<&str, usize> =
        alloc::collections::BTreeMap::new();
    for tok in &reference {
        *ref_counts.entry(tok.as_str()).or_default() += 1;
    }
    let mut matches = 0usize;
    for tok in &cand {
        if let Some(remaining) = ref_counts.get_mut(tok.as_str()) {
            if *remaining > 0 {
                *remaining -= 1;
                matches += 1;
            }
        }
    }
    RougeScore::from_counts(matches, cand.len(), reference.len())
}

/// Longest common subsequence over token sequences, computed with a
/// two-row dynamic program.
pub fn rouge_l(candidate: &str, reference: &str) -> RougeScore {
    let cand = tokenize(candidate);
    let reference = tokenize(reference);
    if cand.is_empty() || reference.is_empty() {
        return RougeScore::zero();
    }
    let lcs = lcs_len(&cand, &reference);
    RougeScore::from_counts(lcs, cand.len(), reference.len())
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = alloc::vec![0usize; b.len() + 1];
    let mut curr = alloc::vec![0usize; b.len() + 1];
    for ai in a {
        for (j, bj) in b.iter().enumerate() {
            curr[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                curr[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut curr);
    }
    prev[b.len()]
}

/// Case-folded, trimmed string equality.
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

fn normalize_answer(s: &str) -> String {
    s.trim().chars().flat_map(|c| c.to_lowercase()).collect()
}

/// Outcome of checking a predicted path string against the graph and a
/// note's gold diagnoses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathValidity {
    Valid,
    Invalid,
    Malformed,
}

/// Re-applies the labeling rule as an oracle: the string must parse,
/// every named concept must resolve, every edge must exist, and the
/// terminal concept must be gold. Grammar violations are `Malformed`;
/// resolution failures, missing edges, and terminal mismatches are
/// `Invalid`.
pub fn verify_path_validity(
    graph: &KnowledgeGraph,
    note_gold: &BTreeSet<String>,
    path_string: &str,
) -> PathValidity {
    let (names, relations) = match parse_path_names(path_string) {
        Ok(parsed) => parsed,
        Err(_) => return PathValidity::Malformed,
    };
    let mut cuis = Vec::with_capacity(names.len());
    for name in names {
        match graph.resolve_name(name) {
            Some(cui) => cuis.push(cui.to_string()),
            None => return PathValidity::Invalid,
        }
    }
    for (i, relation) in relations.iter().enumerate() {
        if !graph.has_edge(&cuis[i], relation, &cuis[i + 1]) {
            return PathValidity::Invalid;
        }
    }
    if note_gold.contains(cuis.last().expect("non-empty path")) {
        PathValidity::Valid
    } else {
        PathValidity::Invalid
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum JudgeError {
    #[error("lexical baseline judge supports only selection tasks, got {0}")]
    UnsupportedTask(String),
    #[error(transparent)]
    Path(#[from] PathParseError),
}

/// Scores each candidate by ROUGE-1 F1 between the candidate's concept
/// names and the note text. P10/P2 answer with the argmax candidate
/// (ties go to the lowest index); PN10 answers with every candidate
/// strictly above the median score, newline-joined in candidate order.
pub fn lexical_baseline_judge(instance: &TaskInstance) -> Result<String, JudgeError> {
    match instance.task {
        TaskKind::P10 | TaskKind::P2 | TaskKind::Pn10 => {}
        other => return Err(JudgeError::UnsupportedTask(other.token().to_string())),
    }
    let mut scores = Vec::with_capacity(instance.candidates.len());
    for candidate in &instance.candidates {
        scores.push(candidate_lexical_score(candidate, &instance.note_text)?);
    }
    if scores.is_empty() {
        return Ok(String::new());
    }
    match instance.task {
        TaskKind::Pn10 => {
            let median = median(&scores);
            let chosen: Vec<&str> = instance
                .candidates
                .iter()
                .zip(&scores)
                .filter(|(_, s)| **s > median)
                .map(|(c, _)| c.as_str())
                .collect();
            Ok(chosen.join("\n"))
        }
        _ => {
            let mut best = 0usize;
            for (i, s) in scores.iter().enumerate() {
                if *s > scores[best] {
                    best = i;
                }
            }
            Ok(instance.candidates[best].clone())
        }
    }
}

/// ROUGE-1 F1 of the candidate path's concept names against the note.
pub fn candidate_lexical_score(candidate: &str, note_text: &str) -> Result<f64, JudgeError> {
    let (names, _) = parse_path_names(candidate)?;
    let joined = names.join(" ");
    Ok(rouge_1(&joined, note_text).f1)
}

fn median(scores: &[f64]) -> f64 {
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "rouge1")]
    Rouge1,
    #[serde(rename = "rougeL")]
    RougeL,
    #[serde(rename = "exact")]
    Exact,
}

impl MetricKind {
    pub fn token(&self) -> &'static str {
        match self {
            MetricKind::Rouge1 => "rouge1",
            MetricKind::RougeL => "rougeL",
            MetricKind::Exact => "exact",
        }
    }

    pub fn score(&self, prediction: &str, gold: &str) -> RougeScore {
        match self {
            MetricKind::Rouge1 => rouge_1(prediction, gold),
            MetricKind::RougeL => rouge_l(prediction, gold),
            MetricKind::Exact => {
                let hit = if exact_match(prediction, gold) { 1.0 } else { 0.0 };
                RougeScore {
                    precision: hit,
                    recall: hit,
                    f1: hit,
                }
            }
        }
    }
}

/// Per-instance scores plus corpus means (reported x100, as in the
/// usual score-table convention).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub per_instance: Vec<RougeScore>,
    pub corpus_precision: f64,
    pub corpus_recall: f64,
    pub corpus_f1: f64,
    pub n: usize,
    pub n_malformed: usize,
    /// Instances where both sides tokenized to nothing; scored 0 by
    /// convention and flagged here.
    pub n_empty_pairs: usize,
}

impl EvalReport {
    /// Corpus means are arithmetic means of the per-instance values,
    /// times 100. `n_malformed` counts prediction records that failed
    /// to parse upstream (they score zero and are included in `n`).
    pub fn from_scores(metric: MetricKind, per_instance: Vec<RougeScore>, n_malformed: usize) -> Self {
        let n = per_instance.len();
        let mean = |f: fn(&RougeScore) -> f64| {
            if n == 0 {
                0.0
            } else {
                per_instance.iter().map(f).sum::<f64>() / n as f64 * 100.0
            }
        };
        EvalReport {
            metric,
            corpus_precision: mean(|s| s.precision),
            corpus_recall: mean(|s| s.recall),
            corpus_f1: mean(|s| s.f1),
            n,
            n_malformed,
            n_empty_pairs: 0,
            per_instance,
        }
    }
}
