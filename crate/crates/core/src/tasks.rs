//! Builds the five path-judging task formulations from labeled path
//! sets: P@10 and P@2 selection, PN@10 multi-select, next-hop
//! prediction, and path completion.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::paths::{format_path, format_path_through_relation, PathParseError, PathSet};
use crate::rng::DetRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "p10")]
    P10,
    #[serde(rename = "p2")]
    P2,
    #[serde(rename = "pn10")]
    Pn10,
    #[serde(rename = "nhp")]
    Nhp,
    #[serde(rename = "pc")]
    Pc,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::P10,
        TaskKind::P2,
        TaskKind::Pn10,
        TaskKind::Nhp,
        TaskKind::Pc,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            TaskKind::P10 => "p10",
            TaskKind::P2 => "p2",
            TaskKind::Pn10 => "pn10",
            TaskKind::Nhp => "nhp",
            TaskKind::Pc => "pc",
        }
    }

    pub fn from_token(s: &str) -> Option<TaskKind> {
        match s {
            "p10" => Some(TaskKind::P10),
            "p2" => Some(TaskKind::P2),
            "pn10" => Some(TaskKind::Pn10),
            "nhp" => Some(TaskKind::Nhp),
            "pc" => Some(TaskKind::Pc),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub num_positives: usize,
    pub seed: u64,
    pub positive_index: Option<usize>,
}

/// One serialized training/eval example. `candidates` is empty for
/// NHP/PC; `partial_path` is null for the selection tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub task: TaskKind,
    pub note_id: String,
    pub note_text: String,
    pub candidates: Vec<String>,
    pub partial_path: Option<String>,
    pub target: String,
    pub meta: TaskMeta,
}

/// Instances built and instances skipped for want of material.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskBuildStats {
    pub built: usize,
    pub skipped_insufficient: usize,
    pub capped: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TaskError {
    #[error(transparent)]
    Path(#[from] PathParseError),
}

struct Rendered {
    positives: Vec<String>,
    negatives: Vec<String>,
}

fn render(graph: &KnowledgeGraph, set: &PathSet) -> Result<Rendered, TaskError> {
    let positives = set
        .positives
        .iter()
        .map(|p| format_path(graph, &p.steps))
        .collect::<Result<Vec<_>, _>>()?;
    let negatives = set
        .negatives
        .iter()
        .map(|p| format_path(graph, &p.steps))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Rendered {
        positives,
        negatives,
    })
}

fn base_instance(task: TaskKind, set: &PathSet, note_text: &str, seed: u64) -> TaskInstance {
    TaskInstance {
        task,
        note_id: set.note_id.clone(),
        note_text: note_text.to_string(),
        candidates: Vec::new(),
        partial_path: None,
        target: String::new(),
        meta: TaskMeta {
            num_positives: 0,
            seed,
            positive_index: None,
        },
    }
}

/// P@10: one instance per positive path; nine negatives sampled
/// without replacement and the ten candidates shuffled.
pub fn build_p10(
    graph: &KnowledgeGraph,
    set: &PathSet,
    note_text: &str,
    seed: u64,
    limit: usize,
) -> Result<(Vec<TaskInstance>, TaskBuildStats), TaskError> {
    let rendered = render(graph, set)?;
    let mut rng = DetRng::new(seed);
    let mut out = Vec::new();
    let mut stats = TaskBuildStats::default();
    for positive in &rendered.positives {
        if rendered.negatives.len() < 9 {
            stats.skipped_insufficient += 1;
            continue;
        }
        if out.len() >= limit {
            stats.capped += 1;
            continue;
        }
        let picked = rng.sample_indices(rendered.negatives.len(), 9);
        let mut candidates: Vec<String> = Vec::with_capacity(10);
        candidates.push(positive.clone());
        candidates.extend(picked.into_iter().map(|i| rendered.negatives[i].clone()));
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        rng.shuffle(&mut order);
        let positive_index = order.iter().position(|&i| i == 0).unwrap();
        let candidates: Vec<String> = order.into_iter().map(|i| candidates[i].clone()).collect();

        let mut inst = base_instance(TaskKind::P10, set, note_text, seed);
        inst.candidates = candidates;
        inst.target = positive.clone();
        inst.meta.num_positives = 1;
        inst.meta.positive_index = Some(positive_index);
        out.push(inst);
    }
    stats.built = out.len();
    Ok((out, stats))
}

/// P@2: each positive paired with one sampled negative, order shuffled.
pub fn build_p2(
    graph: &KnowledgeGraph,
    set: &PathSet,
    note_text: &str,
    seed: u64,
    limit: usize,
) -> Result<(Vec<TaskInstance>, TaskBuildStats), TaskError> {
    let rendered = render(graph, set)?;
    let mut rng = DetRng::new(seed);
    let mut out = Vec::new();
    let mut stats = TaskBuildStats::default();
    for positive in &rendered.positives {
        if rendered.negatives.is_empty() {
            stats.skipped_insufficient += 1;
            continue;
        }
        if out.len() >= limit {
            stats.capped += 1;
            continue;
        }
        let negative = rendered.negatives[rng.below(rendered.negatives.len())].clone();
        let mut candidates = alloc::vec![positive.clone(), negative];
        if rng.below(2) == 1 {
            candidates.swap(0, 1);
        }
        let mut inst = base_instance(TaskKind::P2, set, note_text, seed);
        inst.candidates = candidates;
        inst.target = positive.clone();
        inst.meta.num_positives = 1;
        out.push(inst);
    }
    stats.built = out.len();
    Ok((out, stats))
}

/// PN@10: one instance per path set with k positives (k drawn from
/// [1,5], clamped so ten candidates are always available) and 10-k
/// negatives, shuffled. The target lists the chosen positives in
/// candidate order, newline-joined.
pub fn build_pn10(
    graph: &KnowledgeGraph,
    set: &PathSet,
    note_text: &str,
    seed: u64,
    limit: usize,
) -> Result<(Vec<TaskInstance>, TaskBuildStats), TaskError> {
    let rendered = render(graph, set)?;
    let mut stats = TaskBuildStats::default();
    let n_pos = rendered.positives.len();
    let n_neg = rendered.negatives.len();
    // k must leave 10-k negatives available and stay within [1, 5].
    let k_min = 10usize.saturating_sub(n_neg).max(1);
    let k_max = n_pos.min(5);
    if n_pos == 0 || n_pos + n_neg < 10 || k_min > k_max {
        stats.skipped_insufficient += 1;
        return Ok((Vec::new(), stats));
    }
    if limit == 0 {
        stats.capped += 1;
        return Ok((Vec::new(), stats));
    }
    let mut rng = DetRng::new(seed);
    let drawn = rng.range_inclusive(1, 5);
    let k = drawn.clamp(k_min, k_max);
    let chosen_pos = rng.sample_indices(n_pos, k);
    let chosen_neg = rng.sample_indices(n_neg, 10 - k);

    let mut candidates: Vec<(String, bool)> = Vec::with_capacity(10);
    for i in chosen_pos {
        candidates.push((rendered.positives[i].clone(), true));
    }
    for i in chosen_neg {
        candidates.push((rendered.negatives[i].clone(), false));
    }
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    rng.shuffle(&mut order);
    let candidates: Vec<(String, bool)> =
        order.into_iter().map(|i| candidates[i].clone()).collect();
    let target = candidates
        .iter()
        .filter(|(_, positive)| *positive)
        .map(|(s, _)| s.as_str())
        .collect::<Vec<_>>()
        .join("\n");

    let mut inst = base_instance(TaskKind::Pn10, set, note_text, seed);
    inst.candidates = candidates.into_iter().map(|(s, _)| s).collect();
    inst.target = target;
    inst.meta.num_positives = k;
    stats.built = 1;
    Ok((alloc::vec![inst], stats))
}

/// NHP: for each positive path, truncate immediately after a uniformly
/// chosen relation; the target is `|` plus the next concept's name.
pub fn build_nhp(
    graph: &KnowledgeGraph,
    set: &PathSet,
    note_text: &str,
    seed: u64,
    limit: usize,
) -> Result<(Vec<TaskInstance>, TaskBuildStats), TaskError> {
    let mut rng = DetRng::new(seed);
    let mut out = Vec::new();
    let mut stats = TaskBuildStats::default();
    for (idx, path) in set.positives.iter().enumerate() {
        let hops = path.steps.hops();
        if hops == 0 {
            stats.skipped_insufficient += 1;
            continue;
        }
        // j is drawn before the cap check so the stream (and therefore
        // every emitted instance) is independent of the limit.
        let j = rng.below(hops);
        if out.len() >= limit {
            stats.capped += 1;
            continue;
        }
        out.push(nhp_instance_at(graph, set, note_text, seed, idx, j)?);
    }
    stats.built = out.len();
    Ok((out, stats))
}

/// The deterministic core of NHP construction: truncate `positives[idx]`
/// after relation `j`.
pub fn nhp_instance_at(
    graph: &KnowledgeGraph,
    set: &PathSet,
    note_text: &str,
    seed: u64,
    idx: usize,
    j: usize,
) -> Result<TaskInstance, TaskError> {
    let path = &set.positives[idx];
    let partial = format_path_through_relation(graph, &path.steps, j)?;
    let next_name = graph
        .preferred_name(&path.steps.concepts[j + 1])
        .ok_or_else(|| PathParseError::UnknownCui(path.steps.concepts[j + 1].clone()))?;
    let mut target = String::with_capacity(next_name.len() + 1);
    target.push('|');
    target.push_str(next_name);

    let mut inst = base_instance(TaskKind::Nhp, set, note_text, seed);
    inst.partial_path = Some(partial);
    inst.target = target;
    inst.meta.num_positives = 1;
    Ok(inst)
}

/// PC: the partial path is the start concept name alone; the target is
/// the full remainder.
pub fn build_pc(
    graph: &KnowledgeGraph,
    set: &PathSet,
    note_text: &str,
    limit: usize,
) -> Result<(Vec<TaskInstance>, TaskBuildStats), TaskError> {
    let mut out = Vec::new();
    let mut stats = TaskBuildStats::default();
    for path in &set.positives {
        if out.len() >= limit {
            stats.capped += 1;
            continue;
        }
        let full = format_path(graph, &path.steps)?;
        let start_name = graph
            .preferred_name(path.steps.start())
            .ok_or_else(|| PathParseError::UnknownCui(path.steps.start().to_string()))?;
        let mut inst = base_instance(TaskKind::Pc, set, note_text, 0);
        inst.partial_path = Some(start_name.to_string());
        inst.target = full[start_name.len()..].to_string();
        inst.meta.num_positives = 1;
        out.push(inst);
    }
    stats.built = out.len();
    Ok((out, stats))
}

/// Dispatches to the builder for `task` with a per-note instance limit.
pub fn build_task(
    task: TaskKind,
    graph: &KnowledgeGraph,
    set: &PathSet,
    note_text: &str,
    seed: u64,
    limit: usize,
) -> Result<(Vec<TaskInstance>, TaskBuildStats), TaskError> {
    match task {
        TaskKind::P10 => build_p10(graph, set, note_text, seed, limit),
        TaskKind::P2 => build_p2(graph, set, note_text, seed, limit),
        TaskKind::Pn10 => build_pn10(graph, set, note_text, seed, limit),
        TaskKind::Nhp => build_nhp(graph, set, note_text, seed, limit),
        TaskKind::Pc => build_pc(graph, set, note_text, limit),
    }
}
