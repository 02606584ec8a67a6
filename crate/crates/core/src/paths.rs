//! Bounded DFS path enumeration from mention concepts, positive and
//! negative labeling against gold diagnoses, seeded negative sampling,
//! and the `NAME->REL|NAME` path grammar.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{GraphError, KnowledgeGraph, SemanticTypeFilter};
use crate::matcher::{Mention, TermIndex};
use crate::rng::{self, DetRng};

/// An unlabeled simple path: h+1 concepts joined by h relations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct PathSteps {
    pub concepts: Vec<String>,
    pub relations: Vec<String>,
}

impl PathSteps {
    pub fn hops(&self) -> usize {
        self.relations.len()
    }

    pub fn start(&self) -> &str {
        &self.concepts[0]
    }

    pub fn terminal(&self) -> &str {
        self.concepts.last().expect("path has at least one concept")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathLabel {
    Positive,
    Negative,
}

/// A labeled path with provenance back to the note it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct KgPath {
    pub steps: PathSteps,
    pub label: PathLabel,
    pub note_id: String,
    pub start_mention: Option<Mention>,
}

/// All labeled paths for one note.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSet {
    pub note_id: String,
    pub positives: Vec<KgPath>,
    pub negatives: Vec<KgPath>,
    pub start_concepts: Vec<String>,
}

impl PathSet {
    pub fn total(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }
}

/// One input note: free text plus gold diagnosis cuis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub text: String,
    pub gold_diagnoses: Vec<String>,
}

/// Enumeration and sampling limits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathGenConfig {
    pub max_hops: usize,
    pub max_negatives_per_start: usize,
    pub max_examples_per_note: usize,
}

impl Default for PathGenConfig {
    fn default() -> Self {
        PathGenConfig {
            max_hops: 2,
            max_negatives_per_start: 9,
            max_examples_per_note: 84,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathGenError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("max_hops must be at least 1")]
    ZeroHops,
    #[error("max_examples_per_note must be positive")]
    ZeroExampleCap,
}

/// Why a note produced no paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteSkip {
    /// No gold diagnosis resolved to a filtered graph concept.
    GoldUnmappable,
    /// No extracted mention passed the semantic-type filter.
    NoStartConcepts,
}

/// All simple directed paths of 1..=max_hops hops starting at `start`,
/// in DFS preorder induced by the sorted neighbor lists. Every prefix
/// of an enumerated path is enumerated before it.
pub fn enumerate_paths(
    graph: &KnowledgeGraph,
    start: &str,
    max_hops: usize,
) -> Result<Vec<PathSteps>, PathGenError> {
    if max_hops == 0 {
        return Err(PathGenError::ZeroHops);
    }
    graph.neighbors(start)?;
    let mut out = Vec::new();
    let mut concepts: Vec<String> = alloc::vec![start.to_string()];
    let mut relations: Vec<String> = Vec::new();
    dfs(graph, max_hops, &mut concepts, &mut relations, &mut out);
    Ok(out)
}

fn dfs(
    graph: &KnowledgeGraph,
    max_hops: usize,
    concepts: &mut Vec<String>,
    relations: &mut Vec<String>,
    out: &mut Vec<PathSteps>,
) {
    if relations.len() == max_hops {
        return;
    }
    let current = concepts.last().expect("non-empty stack").clone();
    let edges = graph.neighbors(&current).expect("on-path cui exists");
    for edge in edges {
        if concepts.iter().any(|c| c == &edge.dst) {
            continue; // simple paths only
        }
        concepts.push(edge.dst.clone());
        relations.push(edge.relation.clone());
        out.push(PathSteps {
            concepts: concepts.clone(),
            relations: relations.clone(),
        });
        dfs(graph, max_hops, concepts, relations, out);
        concepts.pop();
        relations.pop();
    }
}

/// Partitions paths by whether their terminal concept is gold.
pub fn label_paths(
    paths: Vec<PathSteps>,
    gold: &BTreeSet<String>,
) -> (Vec<PathSteps>, Vec<PathSteps>) {
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for p in paths {
        if gold.contains(p.terminal()) {
            positives.push(p);
        } else {
            negatives.push(p);
        }
    }
    (positives, negatives)
}

/// Builds the labeled path set for one note: extract mentions, apply
/// the semantic-type filter to start and gold concepts, enumerate and
/// label per start, down-sample negatives per start, then enforce the
/// per-note example cap (negatives are dropped before positives).
pub fn build_note_paths(
    graph: &KnowledgeGraph,
    index: &TermIndex,
    filter: &SemanticTypeFilter,
    note: &Note,
    seed: u64,
    config: &PathGenConfig,
) -> Result<Result<PathSet, NoteSkip>, PathGenError> {
    if config.max_hops == 0 {
        return Err(PathGenError::ZeroHops);
    }
    if config.max_examples_per_note == 0 {
        return Err(PathGenError::ZeroExampleCap);
    }

    let gold: BTreeSet<String> = note
        .gold_diagnoses
        .iter()
        .filter(|cui| {
            graph
                .concept(cui)
                .map(|c| filter.allows(c))
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    if gold.is_empty() {
        return Ok(Err(NoteSkip::GoldUnmappable));
    }

    let mentions = index.extract_mentions(&note.text);
    let mut starts: Vec<(String, Mention)> = Vec::new();
    for m in mentions {
        if starts.iter().any(|(cui, _)| cui == &m.cui) {
            continue;
        }
        let admitted = graph
            .concept(&m.cui)
            .map(|c| filter.allows(c))
            .unwrap_or(false);
        if admitted {
            starts.push((m.cui.clone(), m));
        }
    }
    if starts.is_empty() {
        return Ok(Err(NoteSkip::NoStartConcepts));
    }

    let mut sample_rng = DetRng::substream(seed, "negatives");
    let mut positives: Vec<KgPath> = Vec::new();
    let mut negatives: Vec<KgPath> = Vec::new();
    for (start_cui, mention) in &starts {
        let raw = enumerate_paths(graph, start_cui, config.max_hops)?;
        let (pos, mut neg) = label_paths(raw, &gold);
        rng::downsample_in_place(&mut sample_rng, &mut neg, config.max_negatives_per_start);
        let wrap = |steps: PathSteps, label: PathLabel| KgPath {
            steps,
            label,
            note_id: note.note_id.clone(),
            start_mention: Some(mention.clone()),
        };
        positives.extend(pos.into_iter().map(|p| wrap(p, PathLabel::Positive)));
        negatives.extend(neg.into_iter().map(|p| wrap(p, PathLabel::Negative)));
    }

    let cap = config.max_examples_per_note;
    let mut cap_rng = DetRng::substream(seed, "note-cap");
    if positives.len() + negatives.len() > cap {
        let keep_neg = cap.saturating_sub(positives.len());
        rng::downsample_in_place(&mut cap_rng, &mut negatives, keep_neg);
        if positives.len() > cap {
            rng::downsample_in_place(&mut cap_rng, &mut positives, cap);
        }
    }

    Ok(Ok(PathSet {
        note_id: note.note_id.clone(),
        positives,
        negatives,
        start_concepts: starts.into_iter().map(|(cui, _)| cui).collect(),
    }))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PathParseError {
    #[error("empty path string")]
    Empty,
    #[error("empty concept name at offset {offset}")]
    EmptyName { offset: usize },
    #[error("empty relation at offset {offset}")]
    EmptyRelation { offset: usize },
    #[error("expected '|' after relation at offset {offset}")]
    ExpectedPipe { offset: usize },
    #[error("reserved character '|' in concept name at offset {offset}")]
    ReservedInName { offset: usize },
    #[error("unknown concept name {name:?}")]
    UnknownConcept { name: String },
    #[error("unknown cui {0} while formatting path")]
    UnknownCui(String),
}

/// Grammar-level parse of `NAME ( "->" REL "|" NAME )*` without
/// resolving names against a graph.
pub fn parse_path_names(s: &str) -> Result<(Vec<&str>, Vec<&str>), PathParseError> {
    if s.is_empty() {
        return Err(PathParseError::Empty);
    }
    let mut names = Vec::new();
    let mut relations = Vec::new();
    let mut cursor = 0usize;
    let mut first = true;
    loop {
        let rest = &s[cursor..];
        let (segment, seg_len, more) = match rest.find("->") {
            Some(pos) => (&rest[..pos], pos, true),
            None => (rest, rest.len(), false),
        };
        if first {
            check_name(segment, cursor)?;
            names.push(segment);
            first = false;
        } else {
            let pipe = segment.find('|').ok_or(PathParseError::ExpectedPipe {
                offset: if segment.is_empty() {
                    cursor
                } else {
                    cursor + seg_len - 1
                },
            })?;
            let relation = &segment[..pipe];
            if relation.is_empty() {
                return Err(PathParseError::EmptyRelation { offset: cursor });
            }
            let name = &segment[pipe + 1..];
            check_name(name, cursor + pipe + 1)?;
            relations.push(relation);
            names.push(name);
        }
        if !more {
            break;
        }
        cursor += seg_len + 2;
    }
    Ok((names, relations))
}

fn check_name(name: &str, offset: usize) -> Result<(), PathParseError> {
    if name.is_empty() {
        return Err(PathParseError::EmptyName { offset });
    }
    if let Some(pos) = name.find('|') {
        return Err(PathParseError::ReservedInName {
            offset: offset + pos,
        });
    }
    Ok(())
}

/// Parses a path string and resolves each name to a cui via exact
/// preferred-name lookup. Edge existence is not checked here; that is
/// the validity oracle's job.
pub fn parse_path(graph: &KnowledgeGraph, s: &str) -> Result<PathSteps, PathParseError> {
    let (names, relations) = parse_path_names(s)?;
    let mut concepts = Vec::with_capacity(names.len());
    for name in names {
        match graph.resolve_name(name) {
            Some(cui) => concepts.push(cui.to_string()),
            None => {
                return Err(PathParseError::UnknownConcept {
                    name: name.to_string(),
                })
            }
        }
    }
    Ok(PathSteps {
        concepts,
        relations: relations.into_iter().map(|r| r.to_string()).collect(),
    })
}

/// Renders a path in the grammar using preferred names.
pub fn format_path(graph: &KnowledgeGraph, steps: &PathSteps) -> Result<String, PathParseError> {
    let mut out = String::new();
    for (i, cui) in steps.concepts.iter().enumerate() {
        let name = graph
            .preferred_name(cui)
            .ok_or_else(|| PathParseError::UnknownCui(cui.clone()))?;
        if i > 0 {
            out.push_str("->");
            out.push_str(&steps.relations[i - 1]);
            out.push('|');
        }
        out.push_str(name);
    }
    Ok(out)
}

/// Prefix of the rendered path cut immediately after `relations[j]`,
/// i.e. ending in `->REL`.
pub fn format_path_through_relation(
    graph: &KnowledgeGraph,
    steps: &PathSteps,
    j: usize,
) -> Result<String, PathParseError> {
    debug_assert!(j < steps.relations.len());
    let mut out = String::new();
    for i in 0..=j {
        let name = graph
            .preferred_name(&steps.concepts[i])
            .ok_or_else(|| PathParseError::UnknownCui(steps.concepts[i].clone()))?;
        if i > 0 {
            out.push('|');
        }
        out.push_str(name);
        out.push_str("->");
        out.push_str(&steps.relations[i]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Concept;
    use alloc::vec;

    fn chain_graph() -> KnowledgeGraph {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("A", "Alpha", "T047")).unwrap();
        b.add_concept(Concept::new("B", "Beta", "T047")).unwrap();
        b.add_concept(Concept::new("C", "Gamma", "T047")).unwrap();
        b.add_edge("A", "r1", "B").unwrap();
        b.add_edge("B", "r2", "C").unwrap();
        b.finish()
    }

    fn figure_graph() -> KnowledgeGraph {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("EK", "Elevated k", "T033"))
            .unwrap();
        b.add_concept(Concept::new("CKDS", "Chronic kidney disease (smq)", "T047"))
            .unwrap();
        b.add_concept(Concept::new("KX", "K excess", "T047")).unwrap();
        b.add_edge("EK", "has_member", "CKDS").unwrap();
        b.add_edge("CKDS", "member_of", "KX").unwrap();
        b.finish()
    }

    fn steps(concepts: &[&str], relations: &[&str]) -> PathSteps {
        PathSteps {
            concepts: concepts.iter().map(|s| s.to_string()).collect(),
            relations: relations.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn chain_enumerates_prefix_and_full_path() {
        let g = chain_graph();
        let paths = enumerate_paths(&g, "A", 2).unwrap();
        assert_eq!(
            paths,
            vec![steps(&["A", "B"], &["r1"]), steps(&["A", "B", "C"], &["r1", "r2"])]
        );
    }

    #[test]
    fn triangle_does_not_revisit_start() {
        let mut b = KnowledgeGraph::builder();
        for (cui, name) in [("A", "Alpha"), ("B", "Beta"), ("C", "Gamma")] {
            b.add_concept(Concept::new(cui, name, "T047")).unwrap();
        }
        b.add_edge("A", "r", "B").unwrap();
        b.add_edge("B", "r", "C").unwrap();
        b.add_edge("C", "r", "A").unwrap();
        let g = b.finish();
        let paths = enumerate_paths(&g, "A", 2).unwrap();
        assert_eq!(
            paths,
            vec![steps(&["A", "B"], &["r"]), steps(&["A", "B", "C"], &["r", "r"])]
        );
    }

    #[test]
    fn isolated_node_has_no_paths() {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("A", "Alpha", "T047")).unwrap();
        let g = b.finish();
        assert!(enumerate_paths(&g, "A", 2).unwrap().is_empty());
        assert!(enumerate_paths(&g, "Z", 2).is_err());
        assert!(matches!(
            enumerate_paths(&g, "A", 0),
            Err(PathGenError::ZeroHops)
        ));
    }

    #[test]
    fn labeling_partitions_by_terminal() {
        let g = chain_graph();
        let paths = enumerate_paths(&g, "A", 2).unwrap();
        let gold: BTreeSet<String> = ["C".to_string()].into_iter().collect();
        let (pos, neg) = label_paths(paths.clone(), &gold);
        assert_eq!(pos, vec![steps(&["A", "B", "C"], &["r1", "r2"])]);
        assert_eq!(neg, vec![steps(&["A", "B"], &["r1"])]);

        let none: BTreeSet<String> = ["Z".to_string()].into_iter().collect();
        let (pos, neg) = label_paths(paths.clone(), &none);
        assert!(pos.is_empty());
        assert_eq!(neg.len(), 2);

        let all: BTreeSet<String> = ["B".to_string(), "C".to_string()].into_iter().collect();
        let (pos, neg) = label_paths(paths, &all);
        assert_eq!(pos.len(), 2);
        assert!(neg.is_empty());
    }

    #[test]
    fn figure_one_path_formats_exactly() {
        let g = figure_graph();
        let p = steps(&["EK", "CKDS", "KX"], &["has_member", "member_of"]);
        let rendered = format_path(&g, &p).unwrap();
        assert_eq!(
            rendered,
            "Elevated k->has_member|Chronic kidney disease (smq)->member_of|K excess"
        );
        let parsed = parse_path(&g, &rendered).unwrap();
        assert_eq!(parsed, p);
    }

    #[test]
    fn parse_roundtrip_on_one_hop() {
        let g = chain_graph();
        let p = steps(&["A", "B"], &["r1"]);
        let rendered = format_path(&g, &p).unwrap();
        assert_eq!(rendered, "Alpha->r1|Beta");
        assert_eq!(parse_path(&g, &rendered).unwrap(), p);
    }

    #[test]
    fn dangling_relation_reports_offset() {
        let err = parse_path_names("A->r1").unwrap_err();
        assert_eq!(
            err.to_string(),
            "expected '|' after relation at offset 4"
        );
    }

    #[test]
    fn reserved_pipe_in_name_is_an_error() {
        assert!(matches!(
            parse_path_names("A|B->r|C"),
            Err(PathParseError::ReservedInName { offset: 1 })
        ));
        assert!(matches!(
            parse_path_names("A->r|B|C"),
            Err(PathParseError::ReservedInName { .. })
        ));
    }

    #[test]
    fn unknown_name_is_a_resolution_error() {
        let g = chain_graph();
        assert!(matches!(
            parse_path(&g, "Alpha->r1|Nonexistent"),
            Err(PathParseError::UnknownConcept { .. })
        ));
    }

    #[test]
    fn empty_and_malformed_inputs() {
        assert!(matches!(parse_path_names(""), Err(PathParseError::Empty)));
        assert!(matches!(
            parse_path_names("->r|B"),
            Err(PathParseError::EmptyName { offset: 0 })
        ));
        assert!(matches!(
            parse_path_names("A->|B"),
            Err(PathParseError::EmptyRelation { offset: 3 })
        ));
    }

    #[test]
    fn truncation_through_relation() {
        let g = figure_graph();
        let p = steps(&["EK", "CKDS", "KX"], &["has_member", "member_of"]);
        assert_eq!(
            format_path_through_relation(&g, &p, 0).unwrap(),
            "Elevated k->has_member"
        );
        assert_eq!(
            format_path_through_relation(&g, &p, 1).unwrap(),
            "Elevated k->has_member|Chronic kidney disease (smq)->member_of"
        );
    }

    fn note(id: &str, text: &str, gold: &[&str]) -> Note {
        Note {
            note_id: id.to_string(),
            text: text.to_string(),
            gold_diagnoses: gold.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn note_paths_on_chain_fixture() {
        let g = chain_graph();
        let index = TermIndex::build(&g, 6, 0.7).unwrap();
        let filter = SemanticTypeFilter::all();
        let n = note("n1", "patient shows alpha signs", &["C"]);
        let set = build_note_paths(&g, &index, &filter, &n, 7, &PathGenConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(set.positives.len(), 1);
        assert_eq!(set.negatives.len(), 1);
        assert_eq!(set.start_concepts, vec!["A".to_string()]);
        assert_eq!(set.positives[0].label, PathLabel::Positive);
        assert_eq!(set.positives[0].note_id, "n1");
        assert!(set.positives[0].start_mention.is_some());
    }

    #[test]
    fn seeds_do_not_matter_when_under_cap() {
        let g = chain_graph();
        let index = TermIndex::build(&g, 6, 0.7).unwrap();
        let filter = SemanticTypeFilter::all();
        let n = note("n1", "alpha noted", &["C"]);
        let a = build_note_paths(&g, &index, &filter, &n, 1, &PathGenConfig::default())
            .unwrap()
            .unwrap();
        let b = build_note_paths(&g, &index, &filter, &n, 999, &PathGenConfig::default())
            .unwrap()
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_negative_cap_empties_negatives() {
        let g = chain_graph();
        let index = TermIndex::build(&g, 6, 0.7).unwrap();
        let filter = SemanticTypeFilter::all();
        let n = note("n1", "alpha noted", &["C"]);
        let config = PathGenConfig {
            max_negatives_per_start: 0,
            ..PathGenConfig::default()
        };
        let set = build_note_paths(&g, &index, &filter, &n, 1, &config)
            .unwrap()
            .unwrap();
        assert!(set.negatives.is_empty());
        assert_eq!(set.positives.len(), 1);
    }

    #[test]
    fn skip_reasons() {
        let g = chain_graph();
        let index = TermIndex::build(&g, 6, 0.7).unwrap();
        let filter = SemanticTypeFilter::all();
        let unmappable = note("n1", "alpha noted", &["Z9"]);
        assert_eq!(
            build_note_paths(&g, &index, &filter, &unmappable, 1, &PathGenConfig::default())
                .unwrap(),
            Err(NoteSkip::GoldUnmappable)
        );
        let no_starts = note("n2", "nothing matches here", &["C"]);
        assert_eq!(
            build_note_paths(&g, &index, &filter, &no_starts, 1, &PathGenConfig::default())
                .unwrap(),
            Err(NoteSkip::NoStartConcepts)
        );
    }

    #[test]
    fn per_note_cap_drops_negatives_first() {
        // Star graph: one start with many 1-hop negatives and one positive.
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("S", "start term", "T047")).unwrap();
        b.add_concept(Concept::new("G", "gold", "T047")).unwrap();
        for i in 0..20 {
            b.add_concept(Concept::new(
                &alloc::format!("N{i}"),
                &alloc::format!("neg {i}"),
                "T047",
            ))
            .unwrap();
            b.add_edge("S", "r", &alloc::format!("N{i}")).unwrap();
        }
        b.add_edge("S", "r", "G").unwrap();
        let g = b.finish();
        let index = TermIndex::build(&g, 6, 0.7).unwrap();
        let filter = SemanticTypeFilter::all();
        let n = note("n1", "start term present", &["G"]);
        let config = PathGenConfig {
            max_hops: 2,
            max_negatives_per_start: 50,
            max_examples_per_note: 5,
        };
        let set = build_note_paths(&g, &index, &filter, &n, 3, &config)
            .unwrap()
            .unwrap();
        assert_eq!(set.positives.len(), 1);
        assert_eq!(set.negatives.len(), 4);
        assert_eq!(set.total(), 5);
    }
}
