//! Command implementations: build-paths, make-tasks, evaluate,
//! baseline-judge, merge, and gradcheck. All outputs are written
//! atomically and contain no timestamps, so a rerun with the same
//! config and seed is byte-identical.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use serde::Serialize;

use kgpf_core::eval::{lexical_baseline_judge, EvalReport, MetricKind, RougeScore};
use kgpf_core::kg::KnowledgeGraph;
use kgpf_core::matcher::TermIndex;
use kgpf_core::merge::weighted_merge;
use kgpf_core::objective::{run_gradcheck, GradCheckOp, GradCheckReport};
use kgpf_core::paths::{build_note_paths, parse_path, KgPath, NoteSkip, PathSet};
use kgpf_core::rng::{derive_seed, note_seed};
use kgpf_core::tasks::{build_task, TaskBuildStats, TaskInstance, TaskKind};

use crate::config::PipelineConfig;
use crate::fsutil::write_atomic;
use crate::graph_io::load_graph;
use crate::records::{
    pathset_records, read_jsonl, read_notes, write_jsonl, PathRecord, PredictionRecord, ReportJson,
};
use crate::tensorfile::{load_bundle, save_bundle, Metadata};
use crate::CliError;

/// Index-preserving map over `items` on up to `threads` workers.
/// Results come back in input order regardless of scheduling.
pub fn parallel_map<T, R, F>(items: &[T], threads: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let threads = threads.max(1).min(items.len().max(1));
    if threads <= 1 {
        return items.iter().map(&f).collect();
    }
    let mut out: Vec<Option<R>> = Vec::with_capacity(items.len());
    out.resize_with(items.len(), || None);
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        for (slots, chunk_items) in out.chunks_mut(chunk).zip(items.chunks(chunk)) {
            scope.spawn(move || {
                for (slot, item) in slots.iter_mut().zip(chunk_items) {
                    *slot = Some(f(item));
                }
            });
        }
    });
    out.into_iter().map(|o| o.expect("worker filled slot")).collect()
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct PathStats {
    pub notes_processed: usize,
    pub notes_skipped: usize,
    pub positives: usize,
    pub negatives: usize,
    pub unique_start_concepts: usize,
}

#[derive(Serialize)]
struct PathStatsJson<'a> {
    #[serde(flatten)]
    stats: PathStats,
    config: &'a PipelineConfig,
}

pub struct BuildPathsOutput {
    pub paths_file: PathBuf,
    pub stats_file: PathBuf,
    pub stats: PathStats,
}

pub fn build_paths(config: &PipelineConfig, quiet: bool) -> Result<BuildPathsOutput, CliError> {
    config.validate()?;
    let seed = config.require_seed()?;
    let concepts = config.require_path("concepts", &config.concepts)?;
    let edges = config.require_path("edges", &config.edges)?;
    let notes_path = config.require_path("notes", &config.notes)?;
    let filter = config.semantic_filter.to_filter()?;

    let (graph, report) = load_graph(&concepts, &edges, config.paths.undirected)?;
    if !quiet {
        eprintln!(
            "loaded graph: {} concepts, {} edges",
            report.concepts, report.edges
        );
        for warning in &report.warnings {
            eprintln!("warning: {warning}");
        }
    }
    let notes = read_notes(&notes_path)?;
    let index = TermIndex::build(&graph, config.matcher.n_max, config.matcher.threshold)
        .map_err(|e| CliError::usage(e.to_string()))?;
    let gen_config = config.paths.gen_config();

    let outcomes = parallel_map(&notes, config.threads, |note| {
        build_note_paths(
            &graph,
            &index,
            &filter,
            note,
            note_seed(seed, &note.note_id),
            &gen_config,
        )
    });

    let mut stats = PathStats::default();
    let mut records: Vec<PathRecord> = Vec::new();
    let mut unique_starts: BTreeSet<String> = BTreeSet::new();
    for (note, outcome) in notes.iter().zip(outcomes) {
        let outcome = outcome.map_err(|e| CliError::Internal(e.to_string()))?;
        match outcome {
            Ok(set) => {
                stats.notes_processed += 1;
                stats.positives += set.positives.len();
                stats.negatives += set.negatives.len();
                unique_starts.extend(set.start_concepts.iter().cloned());
                records.extend(pathset_records(&graph, &set).map_err(CliError::Internal)?);
            }
            Err(skip) => {
                stats.notes_skipped += 1;
                if !quiet {
                    let reason = match skip {
                        NoteSkip::GoldUnmappable => "no gold diagnosis in filtered graph",
                        NoteSkip::NoStartConcepts => "no start concepts after filtering",
                    };
                    eprintln!("warning: skipped note {}: {reason}", note.note_id);
                }
            }
        }
    }
    stats.unique_start_concepts = unique_starts.len();
    if records.is_empty() && !quiet {
        eprintln!("warning: no paths produced ({} notes skipped)", stats.notes_skipped);
    }

    let paths_file = config.paths_file_or_default();
    write_jsonl(&paths_file, &records)?;
    let stats_file = config.out_dir.join("path_stats.json");
    let stats_json = PathStatsJson {
        stats,
        config,
    };
    write_pretty_json(&stats_file, &stats_json)?;
    Ok(BuildPathsOutput {
        paths_file,
        stats_file,
        stats,
    })
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct TaskCounts {
    pub instances: usize,
    pub skipped_insufficient: usize,
    pub capped: usize,
}

impl TaskCounts {
    fn absorb(&mut self, stats: TaskBuildStats) {
        self.instances += stats.built;
        self.skipped_insufficient += stats.skipped_insufficient;
        self.capped += stats.capped;
    }
}

#[derive(Serialize)]
struct TaskManifestJson<'a> {
    tasks: BTreeMap<&'static str, TaskCounts>,
    total_instances: usize,
    config: &'a PipelineConfig,
}

pub struct MakeTasksOutput {
    pub files: Vec<(TaskKind, PathBuf, usize)>,
    pub manifest_file: PathBuf,
    pub total_instances: usize,
}

pub fn make_tasks(config: &PipelineConfig, quiet: bool) -> Result<MakeTasksOutput, CliError> {
    config.validate()?;
    let seed = config.require_seed()?;
    let concepts = config.require_path("concepts", &config.concepts)?;
    let edges = config.require_path("edges", &config.edges)?;
    let notes_path = config.require_path("notes", &config.notes)?;
    let kinds = config.task_kinds()?;
    let paths_file = config.paths_file_or_default();
    if !paths_file.exists() {
        return Err(CliError::data(format!(
            "paths file not found: {} (run build-paths first)",
            paths_file.display()
        )));
    }

    let (graph, _) = load_graph(&concepts, &edges, config.paths.undirected)?;
    let notes = read_notes(&notes_path)?;
    let note_text: HashMap<&str, &str> = notes
        .iter()
        .map(|n| (n.note_id.as_str(), n.text.as_str()))
        .collect();
    let records: Vec<PathRecord> = read_jsonl(&paths_file)?;
    let sets = reassemble_path_sets(&graph, &records, &paths_file)?;
    if sets.is_empty() && !quiet {
        eprintln!("warning: empty path set input; datasets will be empty");
    }

    let mut instances: BTreeMap<&'static str, Vec<TaskInstance>> = BTreeMap::new();
    let mut counts: BTreeMap<&'static str, TaskCounts> = BTreeMap::new();
    for kind in &kinds {
        instances.insert(kind.token(), Vec::new());
        counts.insert(kind.token(), TaskCounts::default());
    }

    for set in &sets {
        let text = *note_text.get(set.note_id.as_str()).ok_or_else(|| {
            CliError::data(format!(
                "note {} appears in {} but not in the notes file",
                set.note_id,
                paths_file.display()
            ))
        })?;
        let mut budget = config.per_note_task_cap;
        let per_note = note_seed(seed, &set.note_id);
        for kind in &kinds {
            let task_seed = derive_seed(per_note, kind.token());
            let (built, stats) = build_task(*kind, &graph, set, text, task_seed, budget)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            budget = budget.saturating_sub(built.len());
            counts.get_mut(kind.token()).unwrap().absorb(stats);
            instances.get_mut(kind.token()).unwrap().extend(built);
        }
    }

    let mut files = Vec::new();
    let mut total = 0usize;
    for kind in &kinds {
        let file = config.out_dir.join(format!("{}.jsonl", kind.token()));
        let items = &instances[kind.token()];
        let written = write_jsonl(&file, items)?;
        total += written;
        files.push((*kind, file, written));
    }
    let manifest_file = config.out_dir.join("task_manifest.json");
    let manifest = TaskManifestJson {
        tasks: counts,
        total_instances: total,
        config,
    };
    write_pretty_json(&manifest_file, &manifest)?;
    Ok(MakeTasksOutput {
        files,
        manifest_file,
        total_instances: total,
    })
}

/// Rebuilds per-note path sets from serialized records, in first-seen
/// note order, verifying each record against the graph.
fn reassemble_path_sets(
    graph: &KnowledgeGraph,
    records: &[PathRecord],
    source: &Path,
) -> Result<Vec<PathSet>, CliError> {
    let mut order: Vec<String> = Vec::new();
    let mut by_note: HashMap<String, PathSet> = HashMap::new();
    for record in records {
        let steps = parse_path(graph, &record.path).map_err(|e| {
            CliError::data(format!("{}: path {:?}: {e}", source.display(), record.path))
        })?;
        if steps.hops() != record.hops
            || steps.start() != record.start_cui
            || steps.terminal() != record.terminal_cui
        {
            return Err(CliError::data(format!(
                "{}: record for note {} is inconsistent with the graph: {:?}",
                source.display(),
                record.note_id,
                record.path
            )));
        }
        let set = by_note.entry(record.note_id.clone()).or_insert_with(|| {
            order.push(record.note_id.clone());
            PathSet {
                note_id: record.note_id.clone(),
                ..PathSet::default()
            }
        });
        let path = KgPath {
            steps,
            label: record.label,
            note_id: record.note_id.clone(),
            start_mention: None,
        };
        if !set.start_concepts.iter().any(|c| c == &record.start_cui) {
            set.start_concepts.push(record.start_cui.clone());
        }
        match record.label {
            kgpf_core::paths::PathLabel::Positive => set.positives.push(path),
            kgpf_core::paths::PathLabel::Negative => set.negatives.push(path),
        }
    }
    Ok(order
        .into_iter()
        .map(|id| by_note.remove(&id).expect("grouped"))
        .collect())
}

pub enum PredictionSource<'a> {
    File(&'a Path),
    BaselineJudge,
}

pub fn evaluate(
    dataset_path: &Path,
    source: PredictionSource<'_>,
    metric: MetricKind,
) -> Result<(ReportJson, EvalReport), CliError> {
    let instances: Vec<TaskInstance> = read_jsonl(dataset_path)?;
    let (predictions, n_malformed) = match source {
        PredictionSource::BaselineJudge => {
            let preds = judge_all(&instances)?;
            (preds, 0)
        }
        PredictionSource::File(path) => read_predictions(path, instances.len())?,
    };
    let scores: Vec<RougeScore> = instances
        .iter()
        .zip(&predictions)
        .map(|(inst, pred)| metric.score(pred, &inst.target))
        .collect();
    let n_empty_pairs = instances
        .iter()
        .zip(&predictions)
        .filter(|(inst, pred)| {
            kgpf_core::eval::tokenize(pred).is_empty()
                && kgpf_core::eval::tokenize(&inst.target).is_empty()
        })
        .count();
    let mut report = EvalReport::from_scores(metric, scores, n_malformed);
    report.n_empty_pairs = n_empty_pairs;
    let json = ReportJson {
        metric: metric.token().to_string(),
        corpus_f1: report.corpus_f1,
        corpus_precision: report.corpus_precision,
        corpus_recall: report.corpus_recall,
        n: report.n,
        n_malformed: report.n_malformed,
    };
    Ok((json, report))
}

fn judge_all(instances: &[TaskInstance]) -> Result<Vec<String>, CliError> {
    instances
        .iter()
        .map(|inst| lexical_baseline_judge(inst).map_err(|e| CliError::data(e.to_string())))
        .collect()
}

/// Reads index-keyed predictions. Every dataset index must be covered
/// exactly once; a line that fails to parse is counted as malformed
/// and scored as an empty prediction at its line position.
fn read_predictions(path: &Path, expected: usize) -> Result<(Vec<String>, usize), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut slots: Vec<Option<String>> = vec![None; expected];
    let mut n_malformed = 0usize;
    let mut n_lines = 0usize;
    for line in text.lines().map(|l| l.trim_end_matches('\r')) {
        if line.is_empty() {
            continue;
        }
        let position = n_lines;
        n_lines += 1;
        match serde_json::from_str::<PredictionRecord>(line) {
            Ok(record) => {
                if record.index >= expected {
                    return Err(CliError::data(format!(
                        "prediction index {} out of range (dataset has {expected} instances)",
                        record.index
                    )));
                }
                if slots[record.index].is_some() {
                    return Err(CliError::data(format!(
                        "duplicate prediction for index {}",
                        record.index
                    )));
                }
                slots[record.index] = Some(record.prediction);
            }
            Err(_) => {
                n_malformed += 1;
                if position < expected && slots[position].is_none() {
                    slots[position] = Some(String::new());
                }
            }
        }
    }
    if n_lines != expected {
        return Err(CliError::data(format!(
            "length mismatch: dataset has {expected} instances, predictions file has {n_lines} lines"
        )));
    }
    let mut predictions = Vec::with_capacity(expected);
    for (i, slot) in slots.into_iter().enumerate() {
        predictions.push(slot.ok_or_else(|| {
            CliError::data(format!("missing prediction for index {i}"))
        })?);
    }
    Ok((predictions, n_malformed))
}

pub fn baseline_judge_to_file(dataset_path: &Path, out: &Path) -> Result<usize, CliError> {
    let instances: Vec<TaskInstance> = read_jsonl(dataset_path)?;
    let predictions = judge_all(&instances)?;
    let records: Vec<PredictionRecord> = predictions
        .into_iter()
        .enumerate()
        .map(|(index, prediction)| PredictionRecord { index, prediction })
        .collect();
    Ok(write_jsonl(out, &records)?)
}

pub struct MergeOutput {
    pub tensors: usize,
    pub description: String,
}

pub fn merge_command(
    a: &Path,
    b: &Path,
    lambda: f64,
    allow_nonfinite: bool,
    out: &Path,
) -> Result<MergeOutput, CliError> {
    let (bundle_a, _) = load_bundle(a, allow_nonfinite)?;
    let (bundle_b, _) = load_bundle(b, allow_nonfinite)?;
    let merged = weighted_merge(&bundle_a, &bundle_b, lambda)?;
    let description = format!(
        "{} {} + {} {}",
        fmt_weight(lambda),
        stem(a),
        fmt_weight(1.0 - lambda),
        stem(b)
    );
    let mut metadata = Metadata::new();
    metadata.insert("merge".to_string(), description.clone());
    save_bundle(out, &merged, Some(&metadata))?;
    Ok(MergeOutput {
        tensors: merged.len(),
        description,
    })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn fmt_weight(w: f64) -> String {
    let mut s = format!("{w:.4}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    s
}

/// Runs the op's finite-difference check over the vocab/context matrix
/// for the requested number of seeds and returns the worst case, with
/// `pass` true only when every run passed.
pub fn gradcheck_command(
    op: GradCheckOp,
    seeds: u64,
    beta: Option<f64>,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport, CliError> {
    if seeds == 0 {
        return Err(CliError::usage("--seeds must be at least 1"));
    }
    let mut worst: Option<GradCheckReport> = None;
    let mut all_pass = true;
    for vocab in [2usize, 4, 8] {
        for contexts in [1usize, 3] {
            for seed in 0..seeds {
                let report = run_gradcheck(op, vocab, contexts, seed, beta, h, tol)?;
                all_pass &= report.pass;
                let replace = worst
                    .as_ref()
                    .map(|w| report.max_rel_err > w.max_rel_err)
                    .unwrap_or(true);
                if replace {
                    worst = Some(report);
                }
            }
        }
    }
    let mut report = worst.expect("at least one run");
    report.pass = all_pass;
    Ok(report)
}

pub fn write_pretty_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Internal(format!("serializing {}: {e}", path.display())))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<usize> = (0..100).collect();
        for threads in [1, 2, 3, 8] {
            let out = parallel_map(&items, threads, |x| x * 2);
            assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
        }
    }

    #[test]
    fn weight_formatting() {
        assert_eq!(fmt_weight(0.7), "0.7");
        assert_eq!(fmt_weight(1.0 - 0.7), "0.3");
        assert_eq!(fmt_weight(0.5), "0.5");
        assert_eq!(fmt_weight(1.0), "1");
        assert_eq!(fmt_weight(0.125), "0.125");
    }
}
