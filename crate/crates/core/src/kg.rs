//! Typed directed knowledge graph: concepts keyed by CUI, relation
//! edges, semantic-type filtering, and deterministic neighbor queries.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use thiserror::Error;

/// A graph node: stable identifier, display name, semantic-type code,
/// and optional synonyms. Names and relations must not contain the
/// path-grammar delimiters `->` and `|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Concept {
    pub cui: String,
    pub preferred_name: String,
    pub semantic_type: String,
    pub synonyms: Vec<String>,
}

impl Concept {
    pub fn new(cui: &str, preferred_name: &str, semantic_type: &str) -> Self {
        Concept {
            cui: cui.to_string(),
            preferred_name: preferred_name.to_string(),
            semantic_type: semantic_type.to_string(),
            synonyms: Vec::new(),
        }
    }

    pub fn with_synonyms(mut self, synonyms: &[&str]) -> Self {
        self.synonyms = synonyms.iter().map(|s| s.to_string()).collect();
        self
    }
}

/// A directed labeled edge between two concepts.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RelationEdge {
    pub src: String,
    pub relation: String,
    pub dst: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("duplicate cui {0}")]
    DuplicateCui(String),
    #[error("empty cui")]
    EmptyCui,
    #[error("reserved character in name {name:?} for cui {cui}")]
    ReservedName { cui: String, name: String },
    #[error("invalid semantic type {semantic_type:?} for cui {cui} (expected T followed by three digits)")]
    InvalidSemanticType { cui: String, semantic_type: String },
    #[error("edge ({src}, {relation}, {dst}) references unknown cui {missing}")]
    DanglingEdge {
        src: String,
        relation: String,
        dst: String,
        missing: String,
    },
    #[error("self-loop rejected: ({cui}, {relation}, {cui})")]
    SelfLoop { cui: String, relation: String },
    #[error("duplicate edge ({src}, {relation}, {dst})")]
    DuplicateEdge {
        src: String,
        relation: String,
        dst: String,
    },
    #[error("empty relation on edge from {src} to {dst}")]
    EmptyRelation { src: String, dst: String },
    #[error("reserved character in relation {relation:?} on edge from {src} to {dst}")]
    ReservedRelation {
        src: String,
        relation: String,
        dst: String,
    },
    #[error("unknown cui {0}")]
    UnknownCui(String),
}

/// True if the string contains a path-grammar delimiter (`->` or `|`).
pub fn contains_reserved(s: &str) -> bool {
    s.contains("->") || s.contains('|')
}

fn valid_semantic_type(s: &str) -> bool {
    let bytes = s.as_bytes();
    bytes.len() == 4 && bytes[0] == b'T' && bytes[1..].iter().all(|b| b.is_ascii_digit())
}

/// Whitelist of semantic-type codes admitted as path start and gold
/// (terminal) concepts. The default is the seven diagnosis-relevant
/// categories; `all()` admits every type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticTypeFilter {
    allowed: Option<BTreeSet<String>>,
}

/// Finding, Injury or Poisoning, Pathologic Function, Disease or
/// Syndrome, Mental or Behavioral Dysfunction, Cell or Molecular
/// Dysfunction, Sign or Symptom.
pub const DEFAULT_SEMANTIC_TYPES: [&str; 7] =
    ["T033", "T037", "T046", "T047", "T048", "T049", "T184"];

impl Default for SemanticTypeFilter {
    fn default() -> Self {
        SemanticTypeFilter::from_codes(&DEFAULT_SEMANTIC_TYPES)
    }
}

impl SemanticTypeFilter {
    pub fn from_codes<S: AsRef<str>>(codes: &[S]) -> Self {
        SemanticTypeFilter {
            allowed: Some(codes.iter().map(|c| c.as_ref().to_string()).collect()),
        }
    }

    /// Wildcard filter admitting every semantic type.
    pub fn all() -> Self {
        SemanticTypeFilter { allowed: None }
    }

    pub fn allows_type(&self, semantic_type: &str) -> bool {
        match &self.allowed {
            None => true,
            Some(set) => set.contains(semantic_type),
        }
    }

    pub fn allows(&self, concept: &Concept) -> bool {
        self.allows_type(&concept.semantic_type)
    }

    /// The allowed codes, or `None` for the wildcard filter.
    pub fn codes(&self) -> Option<&BTreeSet<String>> {
        self.allowed.as_ref()
    }
}

/// Immutable validated graph. Neighbor lists are pre-sorted by
/// (relation, dst) so every traversal is deterministic.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    concepts: BTreeMap<String, Concept>,
    out_edges: BTreeMap<String, Vec<RelationEdge>>,
    edge_count: usize,
    name_to_cui: BTreeMap<String, String>,
    name_collisions: Vec<String>,
}

impl KnowledgeGraph {
    pub fn builder() -> GraphBuilder {
        GraphBuilder::new()
    }

    pub fn concept(&self, cui: &str) -> Option<&Concept> {
        self.concepts.get(cui)
    }

    pub fn contains(&self, cui: &str) -> bool {
        self.concepts.contains_key(cui)
    }

    pub fn preferred_name(&self, cui: &str) -> Option<&str> {
        self.concepts.get(cui).map(|c| c.preferred_name.as_str())
    }

    /// Out-edges of `cui` sorted by (relation, dst); empty for sinks.
    pub fn neighbors(&self, cui: &str) -> Result<&[RelationEdge], GraphError> {
        if !self.concepts.contains_key(cui) {
            return Err(GraphError::UnknownCui(cui.to_string()));
        }
        Ok(self
            .out_edges
            .get(cui)
            .map(|v| v.as_slice())
            .unwrap_or(&[]))
    }

    pub fn has_edge(&self, src: &str, relation: &str, dst: &str) -> bool {
        self.out_edges
            .get(src)
            .map(|edges| edges.iter().any(|e| e.relation == relation && e.dst == dst))
            .unwrap_or(false)
    }

    /// Exact preferred-name lookup; collisions resolve to the
    /// first-loaded cui.
    pub fn resolve_name(&self, name: &str) -> Option<&str> {
        self.name_to_cui.get(name).map(|s| s.as_str())
    }

    pub fn concepts(&self) -> impl Iterator<Item = &Concept> {
        self.concepts.values()
    }

    pub fn concept_count(&self) -> usize {
        self.concepts.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    /// Preferred-name collision warnings collected at build time.
    pub fn warnings(&self) -> &[String] {
        &self.name_collisions
    }
}

/// Incremental validating builder. Concepts must be added before any
/// edge that references them.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    concepts: BTreeMap<String, Concept>,
    insertion_order: Vec<String>,
    edges: Vec<RelationEdge>,
    seen_edges: BTreeSet<(String, String, String)>,
    undirected: bool,
}

impl GraphBuilder {
    pub fn new() -> Self {
        GraphBuilder::default()
    }

    /// When set, every edge also gets a synthesized reverse edge with
    /// the same relation name, so traversal and the validity oracle see
    /// a consistent undirected view. Off by default.
    pub fn undirected(mut self, undirected: bool) -> Self {
        self.undirected = undirected;
        self
    }

    pub fn add_concept(&mut self, concept: Concept) -> Result<(), GraphError> {
        if concept.cui.is_empty() {
            return Err(GraphError::EmptyCui);
        }
        if contains_reserved(&concept.preferred_name) {
            return Err(GraphError::ReservedName {
                cui: concept.cui,
                name: concept.preferred_name,
            });
        }
        if !valid_semantic_type(&concept.semantic_type) {
            return Err(GraphError::InvalidSemanticType {
                cui: concept.cui,
                semantic_type: concept.semantic_type,
            });
        }
        if self.concepts.contains_key(&concept.cui) {
            return Err(GraphError::DuplicateCui(concept.cui));
        }
        self.insertion_order.push(concept.cui.clone());
        self.concepts.insert(concept.cui.clone(), concept);
        Ok(())
    }

    pub fn add_edge(&mut self, src: &str, relation: &str, dst: &str) -> Result<(), GraphError> {
        if relation.is_empty() {
            return Err(GraphError::EmptyRelation {
                src: src.to_string(),
                dst: dst.to_string(),
            });
        }
        if contains_reserved(relation) {
            return Err(GraphError::ReservedRelation {
                src: src.to_string(),
                relation: relation.to_string(),
                dst: dst.to_string(),
            });
        }
        if src == dst {
            return Err(GraphError::SelfLoop {
                cui: src.to_string(),
                relation: relation.to_string(),
            });
        }
        for endpoint in [src, dst] {
            if !self.concepts.contains_key(endpoint) {
                return Err(GraphError::DanglingEdge {
                    src: src.to_string(),
                    relation: relation.to_string(),
                    dst: dst.to_string(),
                    missing: endpoint.to_string(),
                });
            }
        }
        let key = (src.to_string(), relation.to_string(), dst.to_string());
        if !self.seen_edges.insert(key) {
            return Err(GraphError::DuplicateEdge {
                src: src.to_string(),
                relation: relation.to_string(),
                dst: dst.to_string(),
            });
        }
        self.edges.push(RelationEdge {
            src: src.to_string(),
            relation: relation.to_string(),
            dst: dst.to_string(),
        });
        Ok(())
    }

    pub fn finish(mut self) -> KnowledgeGraph {
        if self.undirected {
            let forward: Vec<RelationEdge> = self.edges.clone();
            for e in forward {
                let key = (e.dst.clone(), e.relation.clone(), e.src.clone());
                if self.seen_edges.insert(key) {
                    self.edges.push(RelationEdge {
                        src: e.dst,
                        relation: e.relation,
                        dst: e.src,
                    });
                }
            }
        }

        let mut out_edges: BTreeMap<String, Vec<RelationEdge>> = BTreeMap::new();
        let edge_count = self.edges.len();
        for e in self.edges {
            out_edges.entry(e.src.clone()).or_default().push(e);
        }
        for edges in out_edges.values_mut() {
            edges.sort_by(|a, b| (&a.relation, &a.dst).cmp(&(&b.relation, &b.dst)));
        }

        let mut name_to_cui: BTreeMap<String, String> = BTreeMap::new();
        let mut name_collisions = Vec::new();
        for cui in &self.insertion_order {
            let concept = &self.concepts[cui];
            if let Some(existing) = name_to_cui.get(&concept.preferred_name) {
                name_collisions.push(format!(
                    "preferred name {:?} shared by {} and {}; paths resolve to {}",
                    concept.preferred_name, existing, cui, existing
                ));
            } else {
                name_to_cui.insert(concept.preferred_name.clone(), cui.clone());
            }
        }

        KnowledgeGraph {
            concepts: self.concepts,
            out_edges,
            edge_count,
            name_to_cui,
            name_collisions,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
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

    #[test]
    fn three_node_fixture_loads() {
        let g = chain_graph();
        assert_eq!(g.concept_count(), 3);
        assert_eq!(g.edge_count(), 2);
    }

    #[test]
    fn duplicate_cui_is_named_in_error() {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("X1", "First", "T047")).unwrap();
        let err = b
            .add_concept(Concept::new("X1", "Second", "T047"))
            .unwrap_err();
        assert_eq!(err.to_string(), "duplicate cui X1");
    }

    #[test]
    fn dangling_edge_names_the_triple() {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("A", "Alpha", "T047")).unwrap();
        let err = b.add_edge("A", "r1", "Z9").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("(A, r1, Z9)"), "{msg}");
        assert!(msg.contains("Z9"), "{msg}");
    }

    #[test]
    fn reserved_characters_rejected() {
        let mut b = KnowledgeGraph::builder();
        assert!(matches!(
            b.add_concept(Concept::new("A", "bad->name", "T047")),
            Err(GraphError::ReservedName { .. })
        ));
        assert!(matches!(
            b.add_concept(Concept::new("A", "bad|name", "T047")),
            Err(GraphError::ReservedName { .. })
        ));
        b.add_concept(Concept::new("A", "Alpha", "T047")).unwrap();
        b.add_concept(Concept::new("B", "Beta", "T047")).unwrap();
        assert!(matches!(
            b.add_edge("A", "r|x", "B"),
            Err(GraphError::ReservedRelation { .. })
        ));
    }

    #[test]
    fn self_loop_rejected() {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("A", "Alpha", "T047")).unwrap();
        assert!(matches!(
            b.add_edge("A", "r", "A"),
            Err(GraphError::SelfLoop { .. })
        ));
    }

    #[test]
    fn invalid_semantic_type_rejected() {
        let mut b = KnowledgeGraph::builder();
        for bad in ["T04", "T0477", "X047", "t047", "T04a"] {
            assert!(
                matches!(
                    b.add_concept(Concept::new("A", "Alpha", bad)),
                    Err(GraphError::InvalidSemanticType { .. })
                ),
                "{bad} should be rejected"
            );
        }
    }

    #[test]
    fn neighbors_are_sorted_by_relation_then_dst() {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("N", "Node", "T047")).unwrap();
        b.add_concept(Concept::new("X", "Ex", "T047")).unwrap();
        b.add_concept(Concept::new("Y", "Why", "T047")).unwrap();
        b.add_edge("N", "r2", "X").unwrap();
        b.add_edge("N", "r1", "Y").unwrap();
        let g = b.finish();
        let order: Vec<(&str, &str)> = g
            .neighbors("N")
            .unwrap()
            .iter()
            .map(|e| (e.relation.as_str(), e.dst.as_str()))
            .collect();
        assert_eq!(order, vec![("r1", "Y"), ("r2", "X")]);
    }

    #[test]
    fn sink_node_has_no_neighbors() {
        let g = chain_graph();
        assert!(g.neighbors("C").unwrap().is_empty());
        assert!(matches!(g.neighbors("Z"), Err(GraphError::UnknownCui(_))));
    }

    #[test]
    fn default_filter_is_exactly_the_seven_codes() {
        let filter = SemanticTypeFilter::default();
        let codes = filter.codes().unwrap();
        assert_eq!(codes.len(), 7);
        for code in DEFAULT_SEMANTIC_TYPES {
            assert!(filter.allows_type(code));
        }
        assert!(!filter.allows_type("T121"));
        assert!(SemanticTypeFilter::all().allows_type("T121"));
    }

    #[test]
    fn name_collision_resolves_to_first_loaded() {
        let mut b = KnowledgeGraph::builder();
        b.add_concept(Concept::new("C2", "Same", "T047")).unwrap();
        b.add_concept(Concept::new("C1", "Same", "T047")).unwrap();
        let g = b.finish();
        assert_eq!(g.resolve_name("Same"), Some("C2"));
        assert_eq!(g.warnings().len(), 1);
    }

    #[test]
    fn undirected_synthesizes_reverse_edges() {
        let mut b = KnowledgeGraph::builder().undirected(true);
        b.add_concept(Concept::new("A", "Alpha", "T047")).unwrap();
        b.add_concept(Concept::new("B", "Beta", "T047")).unwrap();
        b.add_edge("A", "r", "B").unwrap();
        let g = b.finish();
        assert!(g.has_edge("A", "r", "B"));
        assert!(g.has_edge("B", "r", "A"));
        assert_eq!(g.edge_count(), 2);
    }
}
