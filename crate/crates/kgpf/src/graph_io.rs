//! TSV graph loading.
//!
//! `concepts.tsv`: `cui<TAB>preferred_name<TAB>semantic_type<TAB>syn1;syn2;...`
//! (the synonym column may be empty or absent). `edges.tsv`:
//! `src<TAB>relation<TAB>dst`. UTF-8, LF line endings, no header row.

use std::path::{Path, PathBuf};

use thiserror::Error;

use kgpf_core::kg::{Concept, GraphError, KnowledgeGraph};

#[derive(Debug, Error)]
pub enum GraphIoError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected {expected} tab-separated fields, got {got}")]
    BadColumns {
        path: PathBuf,
        line: usize,
        expected: &'static str,
        got: usize,
    },
    #[error("{path}:{line}: {source}")]
    Graph {
        path: PathBuf,
        line: usize,
        source: Box<GraphError>,
    },
}

#[derive(Debug, Clone)]
pub struct LoadReport {
    pub concepts: usize,
    pub edges: usize,
    pub warnings: Vec<String>,
}

pub fn load_graph(
    concepts_path: &Path,
    edges_path: &Path,
    undirected: bool,
) -> Result<(KnowledgeGraph, LoadReport), GraphIoError> {
    let mut builder = KnowledgeGraph::builder().undirected(undirected);

    let concepts_text = read(concepts_path)?;
    for (line_no, line) in lines(&concepts_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() < 3 || fields.len() > 4 {
            return Err(GraphIoError::BadColumns {
                path: concepts_path.to_path_buf(),
                line: line_no,
                expected: "3 or 4",
                got: fields.len(),
            });
        }
        let synonyms: Vec<&str> = fields
            .get(3)
            .map(|col| col.split(';').filter(|s| !s.is_empty()).collect())
            .unwrap_or_default();
        let concept = Concept::new(fields[0], fields[1], fields[2]).with_synonyms(&synonyms);
        builder.add_concept(concept).map_err(|source| GraphIoError::Graph {
            path: concepts_path.to_path_buf(),
            line: line_no,
            source: Box::new(source),
        })?;
    }

    let edges_text = read(edges_path)?;
    for (line_no, line) in lines(&edges_text) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(GraphIoError::BadColumns {
                path: edges_path.to_path_buf(),
                line: line_no,
                expected: "3",
                got: fields.len(),
            });
        }
        builder
            .add_edge(fields[0], fields[1], fields[2])
            .map_err(|source| GraphIoError::Graph {
                path: edges_path.to_path_buf(),
                line: line_no,
                source: Box::new(source),
            })?;
    }

    let graph = builder.finish();
    let report = LoadReport {
        concepts: graph.concept_count(),
        edges: graph.edge_count(),
        warnings: graph.warnings().to_vec(),
    };
    Ok((graph, report))
}

fn read(path: &Path) -> Result<String, GraphIoError> {
    std::fs::read_to_string(path).map_err(|source| GraphIoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// 1-based numbered, non-empty lines with any trailing CR stripped.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.is_empty())
}
