//! Pipeline configuration: a single JSON file plus flag overrides
//! (flags win). The fully resolved configuration is echoed into every
//! stats/manifest output so reruns are reproducible from the artifact
//! alone.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use kgpf_core::kg::SemanticTypeFilter;
use kgpf_core::paths::PathGenConfig;
use kgpf_core::tasks::TaskKind;

use crate::CliError;

/// Semantic filter selector: the default seven codes, the wildcard, or
/// an explicit code list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FilterSpec {
    Named(String),
    Codes(Vec<String>),
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec::Named("default".to_string())
    }
}

impl FilterSpec {
    pub fn to_filter(&self) -> Result<SemanticTypeFilter, CliError> {
        match self {
            FilterSpec::Named(name) => match name.as_str() {
                "default" => Ok(SemanticTypeFilter::default()),
                "all" => Ok(SemanticTypeFilter::all()),
                other => Err(CliError::usage(format!(
                    "semantic filter must be \"default\", \"all\", or a code list, got {other:?}"
                ))),
            },
            FilterSpec::Codes(codes) => Ok(SemanticTypeFilter::from_codes(codes)),
        }
    }

    pub fn parse_flag(value: &str) -> FilterSpec {
        match value {
            "default" | "all" => FilterSpec::Named(value.to_string()),
            list => FilterSpec::Codes(
                list.split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect(),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatcherConfig {
    pub n_max: usize,
    pub threshold: f64,
}

impl Default for MatcherConfig {
    fn default() -> Self {
        MatcherConfig {
            n_max: kgpf_core::matcher::DEFAULT_WINDOW,
            threshold: kgpf_core::matcher::DEFAULT_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub max_hops: usize,
    pub max_negatives_per_start: usize,
    pub max_examples_per_note: usize,
    pub undirected: bool,
}

impl Default for PathsConfig {
    fn default() -> Self {
        let base = PathGenConfig::default();
        PathsConfig {
            max_hops: base.max_hops,
            max_negatives_per_start: base.max_negatives_per_start,
            max_examples_per_note: base.max_examples_per_note,
            undirected: false,
        }
    }
}

impl PathsConfig {
    pub fn gen_config(&self) -> PathGenConfig {
        PathGenConfig {
            max_hops: self.max_hops,
            max_negatives_per_start: self.max_negatives_per_start,
            max_examples_per_note: self.max_examples_per_note,
        }
    }
}

/// Per-task instruction templates. Instances store structured fields
/// only; downstream trainers render prompts from these defaults, with
/// `{partial_path}` standing in for the partial path on the completion
/// tasks.
pub fn default_instructions() -> BTreeMap<String, String> {
    let pairs = [
        (
            "p10",
            "Given the patient note and 10 candidate KG paths, select the one valid path.",
        ),
        (
            "p2",
            "Given the patient note and 2 candidate KG paths, select the valid path.",
        ),
        (
            "pn10",
            "Given the patient note and 10 candidate KG paths, identify all valid paths.",
        ),
        (
            "nhp",
            "Given the PATH '{partial_path}', predict the next hop of the PATH",
        ),
        (
            "pc",
            "Given the PATH '{partial_path}', complete the rest of the PATH.",
        ),
    ];
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

/// The full pipeline configuration. Also the shape echoed into output
/// manifests after resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub concepts: Option<PathBuf>,
    pub edges: Option<PathBuf>,
    pub notes: Option<PathBuf>,
    pub paths_file: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub semantic_filter: FilterSpec,
    pub matcher: MatcherConfig,
    pub paths: PathsConfig,
    pub tasks: Vec<String>,
    pub per_note_task_cap: usize,
    pub threads: usize,
    pub instructions: BTreeMap<String, String>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            concepts: None,
            edges: None,
            notes: None,
            paths_file: None,
            seed: None,
            out_dir: PathBuf::from("out"),
            semantic_filter: FilterSpec::default(),
            matcher: MatcherConfig::default(),
            paths: PathsConfig::default(),
            tasks: TaskKind::ALL.iter().map(|t| t.token().to_string()).collect(),
            per_note_task_cap: 84,
            threads: 1,
            instructions: default_instructions(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<PipelineConfig, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn task_kinds(&self) -> Result<Vec<TaskKind>, CliError> {
        let mut seen = BTreeSet::new();
        let mut kinds = Vec::new();
        for token in &self.tasks {
            let kind = TaskKind::from_token(token)
                .ok_or_else(|| CliError::usage(format!("unknown task {token:?}")))?;
            if seen.insert(token.clone()) {
                kinds.push(kind);
            }
        }
        if kinds.is_empty() {
            return Err(CliError::usage("no tasks requested"));
        }
        // Canonical build order regardless of how the list was given.
        kinds.sort_by_key(|k| TaskKind::ALL.iter().position(|t| t == k).unwrap());
        Ok(kinds)
    }

    pub fn require_seed(&self) -> Result<u64, CliError> {
        self.seed
            .ok_or_else(|| CliError::usage("a --seed (or config seed) is required for sampling commands"))
    }

    pub fn require_path(
        &self,
        field: &str,
        value: &Option<PathBuf>,
    ) -> Result<PathBuf, CliError> {
        let path = value
            .clone()
            .ok_or_else(|| CliError::usage(format!("missing required input: {field}")))?;
        if !path.exists() {
            return Err(CliError::data(format!(
                "{field} file not found: {}",
                path.display()
            )));
        }
        Ok(path)
    }

    /// The default location build-paths writes and make-tasks reads.
    pub fn paths_file_or_default(&self) -> PathBuf {
        self.paths_file
            .clone()
            .unwrap_or_else(|| self.out_dir.join("paths.jsonl"))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.per_note_task_cap == 0 {
            return Err(CliError::usage("per_note_task_cap must be positive"));
        }
        if self.paths.max_hops == 0 {
            return Err(CliError::usage("paths.max_hops must be at least 1"));
        }
        if self.paths.max_examples_per_note == 0 {
            return Err(CliError::usage("paths.max_examples_per_note must be positive"));
        }
        if self.threads == 0 {
            return Err(CliError::usage("threads must be at least 1"));
        }
        self.semantic_filter.to_filter().map(|_| ())
    }
}
