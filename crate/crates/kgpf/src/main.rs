use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kgpf::config::{FilterSpec, PipelineConfig};
use kgpf::pipeline::{
    baseline_judge_to_file, build_paths, evaluate, gradcheck_command, make_tasks, merge_command,
    write_pretty_json, PredictionSource,
};
use kgpf::CliError;
use kgpf_core::eval::MetricKind;
use kgpf_core::objective::{GradCheckOp, GRADCHECK_DEFAULT_STEP, GRADCHECK_DEFAULT_TOL};

/// Knowledge-graph path supervision pipeline: build labeled path sets
/// from notes, emit path-judging task datasets, evaluate predictions,
/// verify objective gradients, and merge model checkpoints.
#[derive(Parser)]
#[command(name = "kgpf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON config file; command-line flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed for all sampling (required by build-paths/make-tasks)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default "out")
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Worker threads for per-note processing
    #[arg(long, global = true, env = "KGPF_THREADS")]
    threads: Option<usize>,

    /// Suppress progress and warning chatter on stderr
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct GraphInputs {
    /// Concepts TSV (cui, preferred_name, semantic_type, synonyms)
    #[arg(long)]
    concepts: Option<PathBuf>,

    /// Edges TSV (src, relation, dst)
    #[arg(long)]
    edges: Option<PathBuf>,

    /// Notes JSONL ({"note_id","text","gold_diagnoses"})
    #[arg(long)]
    notes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate and label KG paths per note, with seeded sampling
    BuildPaths {
        #[command(flatten)]
        graph: GraphInputs,

        /// Maximum hops per path
        #[arg(long)]
        max_hops: Option<usize>,

        /// Negatives kept per start concept
        #[arg(long)]
        max_negatives_per_start: Option<usize>,

        /// Total examples kept per note
        #[arg(long)]
        max_examples_per_note: Option<usize>,

        /// Matcher window length in tokens
        #[arg(long)]
        n_max: Option<usize>,

        /// Matcher Jaccard threshold in (0, 1]
        #[arg(long)]
        threshold: Option<f64>,

        /// Semantic filter: "default", "all", or comma-separated codes
        #[arg(long)]
        filter: Option<String>,

        /// Also traverse synthesized reverse edges
        #[arg(long)]
        undirected: bool,
    },
    /// Build task datasets (p10, p2, pn10, nhp, pc) from labeled paths
    MakeTasks {
        #[command(flatten)]
        graph: GraphInputs,

        /// Labeled paths JSONL (default <out-dir>/paths.jsonl)
        #[arg(long)]
        paths: Option<PathBuf>,

        /// Comma-separated subset of tasks (default all five)
        #[arg(long)]
        tasks: Option<String>,

        /// Instance budget per note across tasks
        #[arg(long)]
        per_note_cap: Option<usize>,
    },
    /// Score predictions against a dataset's targets
    Evaluate {
        /// Dataset JSONL produced by make-tasks
        #[arg(long)]
        dataset: PathBuf,

        /// Predictions JSONL ({"index","prediction"})
        #[arg(long, conflicts_with = "baseline_judge")]
        predictions: Option<PathBuf>,

        /// Judge candidates with the lexical baseline instead of a file
        #[arg(long)]
        baseline_judge: bool,

        /// rouge1, rougeL, or exact
        #[arg(long)]
        metric: String,

        /// Write the report JSON here as well as stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Emit lexical-baseline predictions for a selection dataset
    BaselineJudge {
        #[arg(long)]
        dataset: PathBuf,

        #[arg(long)]
        out: PathBuf,
    },
    /// Weighted-average two tensor bundles
    Merge {
        /// First bundle (weight lambda)
        #[arg(long)]
        a: PathBuf,

        /// Second bundle (weight 1 - lambda)
        #[arg(long)]
        b: PathBuf,

        /// Interpolation weight in [0, 1]
        #[arg(long, conflicts_with = "doge")]
        lambda: Option<f64>,

        /// Simple 0.5/0.5 average
        #[arg(long)]
        doge: bool,

        #[arg(long)]
        out: PathBuf,

        /// Load tensors containing NaN/Inf instead of rejecting them
        #[arg(long)]
        allow_nonfinite: bool,
    },
    /// Finite-difference check of an objective's analytic gradient
    Gradcheck {
        /// sft, dpo, grpo, or dss
        #[arg(long)]
        op: String,

        /// Seeds per (vocab, contexts) cell
        #[arg(long, default_value_t = 20)]
        seeds: u64,

        /// Relative error tolerance
        #[arg(long)]
        tol: Option<f64>,

        /// Central difference step
        #[arg(long)]
        step: Option<f64>,

        /// Override beta for dpo/grpo
        #[arg(long)]
        beta: Option<f64>,

        /// Write the report JSON here as well as stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    // A panic is an internal invariant violation: exit 3, not 101.
    match std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(err)) => {
            eprintln!("{err}");
            ExitCode::from(err.exit_code() as u8)
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            eprintln!("internal error: {message}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
    }
    if let Some(out_dir) = &cli.out_dir {
        config.out_dir = out_dir.clone();
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    let quiet = cli.quiet;

    match cli.command {
        Command::BuildPaths {
            graph,
            max_hops,
            max_negatives_per_start,
            max_examples_per_note,
            n_max,
            threshold,
            filter,
            undirected,
        } => {
            apply_graph_inputs(&mut config, graph);
            if let Some(v) = max_hops {
                config.paths.max_hops = v;
            }
            if let Some(v) = max_negatives_per_start {
                config.paths.max_negatives_per_start = v;
            }
            if let Some(v) = max_examples_per_note {
                config.paths.max_examples_per_note = v;
            }
            if let Some(v) = n_max {
                config.matcher.n_max = v;
            }
            if let Some(v) = threshold {
                config.matcher.threshold = v;
            }
            if let Some(spec) = filter {
                config.semantic_filter = FilterSpec::parse_flag(&spec);
            }
            if undirected {
                config.paths.undirected = true;
            }
            let output = build_paths(&config, quiet)?;
            if !quiet {
                eprintln!(
                    "wrote {} ({} positives, {} negatives, {} notes processed, {} skipped)",
                    output.paths_file.display(),
                    output.stats.positives,
                    output.stats.negatives,
                    output.stats.notes_processed,
                    output.stats.notes_skipped
                );
                eprintln!("wrote {}", output.stats_file.display());
            }
            Ok(())
        }
        Command::MakeTasks {
            graph,
            paths,
            tasks,
            per_note_cap,
        } => {
            apply_graph_inputs(&mut config, graph);
            if let Some(paths) = paths {
                config.paths_file = Some(paths);
            }
            if let Some(list) = tasks {
                config.tasks = list
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
            }
            if let Some(cap) = per_note_cap {
                config.per_note_task_cap = cap;
            }
            let output = make_tasks(&config, quiet)?;
            if !quiet {
                for (kind, file, count) in &output.files {
                    eprintln!("wrote {} ({} {} instances)", file.display(), count, kind.token());
                }
                eprintln!("wrote {}", output.manifest_file.display());
            }
            Ok(())
        }
        Command::Evaluate {
            dataset,
            predictions,
            baseline_judge,
            metric,
            out,
        } => {
            let metric = parse_metric(&metric)?;
            let source = if baseline_judge {
                PredictionSource::BaselineJudge
            } else {
                match &predictions {
                    Some(path) => PredictionSource::File(path),
                    None => {
                        return Err(CliError::usage(
                            "either --predictions or --baseline-judge is required",
                        ))
                    }
                }
            };
            let (report, detail) = evaluate(&dataset, source, metric)?;
            let line = serde_json::to_string(&report)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{line}");
            if !quiet && detail.n_empty_pairs > 0 {
                eprintln!(
                    "note: {} instances scored 0 with both prediction and target empty",
                    detail.n_empty_pairs
                );
            }
            if let Some(out) = out {
                write_pretty_json(&out, &report)?;
            }
            Ok(())
        }
        Command::BaselineJudge { dataset, out } => {
            let written = baseline_judge_to_file(&dataset, &out)?;
            if !quiet {
                eprintln!("wrote {} ({written} predictions)", out.display());
            }
            Ok(())
        }
        Command::Merge {
            a,
            b,
            lambda,
            doge,
            out,
            allow_nonfinite,
        } => {
            let lambda = match (lambda, doge) {
                (Some(l), false) => l,
                (None, true) => 0.5,
                (None, false) => {
                    return Err(CliError::usage("either --lambda or --doge is required"))
                }
                (Some(_), true) => unreachable!("clap conflicts_with"),
            };
            let output = merge_command(&a, &b, lambda, allow_nonfinite, &out)?;
            if !quiet {
                eprintln!(
                    "wrote {} ({} tensors, {})",
                    out.display(),
                    output.tensors,
                    output.description
                );
            }
            Ok(())
        }
        Command::Gradcheck {
            op,
            seeds,
            tol,
            step,
            beta,
            out,
        } => {
            let op = GradCheckOp::from_token(&op)
                .ok_or_else(|| CliError::usage(format!("unknown op {op:?} (expected sft, dpo, grpo, or dss)")))?;
            let report = gradcheck_command(
                op,
                seeds,
                beta,
                step.unwrap_or(GRADCHECK_DEFAULT_STEP),
                tol.unwrap_or(GRADCHECK_DEFAULT_TOL),
            )?;
            let line = serde_json::to_string(&report)
                .map_err(|e| CliError::Internal(e.to_string()))?;
            println!("{line}");
            if let Some(out) = out {
                write_pretty_json(&out, &report)?;
            }
            if report.pass {
                Ok(())
            } else {
                Err(CliError::data(format!(
                    "gradient check failed for {}: max_rel_err = {}",
                    report.op, report.max_rel_err
                )))
            }
        }
    }
}

fn apply_graph_inputs(config: &mut PipelineConfig, inputs: GraphInputs) {
    if let Some(path) = inputs.concepts {
        config.concepts = Some(path);
    }
    if let Some(path) = inputs.edges {
        config.edges = Some(path);
    }
    if let Some(path) = inputs.notes {
        config.notes = Some(path);
    }
}

fn parse_metric(value: &str) -> Result<MetricKind, CliError> {
    match value.to_ascii_lowercase().as_str() {
        "rouge1" | "rouge-1" => Ok(MetricKind::Rouge1),
        "rougel" | "rouge-l" => Ok(MetricKind::RougeL),
        "exact" => Ok(MetricKind::Exact),
        other => Err(CliError::usage(format!(
            "unknown metric {other:?} (expected rouge1, rougeL, or exact)"
        ))),
    }
}
