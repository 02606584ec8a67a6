//! Deterministic building blocks for knowledge-graph path supervision:
//! a typed directed graph with semantic-type metadata, dictionary-based
//! concept matching over free text, bounded DFS path enumeration with
//! positive/negative labeling, path-judging task construction, ROUGE and
//! exact-match scoring with a graph validity oracle, training-objective
//! math with finite-difference gradient verification, and weighted tensor
//! merging.
//!
//! The crate is `no_std` (with `alloc`) so the algorithms stay portable
//! and free of IO; file formats, the pipeline, and the CLI live in the
//! companion `kgpf` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod eval;
pub mod kg;
pub mod matcher;
pub mod merge;
pub mod objective;
pub mod paths;
pub mod rng;
pub mod tasks;

mod float;

pub use eval::{exact_match, rouge_1, rouge_l, EvalReport, MetricKind, PathValidity, RougeScore};
pub use kg::{Concept, GraphBuilder, GraphError, KnowledgeGraph, RelationEdge, SemanticTypeFilter};
pub use matcher::{Mention, TermIndex};
pub use merge::{doge_merge, weighted_merge, MergeError, Tensor, TensorBundle};
pub use objective::{GradCheckReport, HyperParams, LossValue, ToyPolicy, Trajectory};
pub use paths::{KgPath, Note, PathGenConfig, PathLabel, PathSet, PathSteps};
pub use rng::DetRng;
pub use tasks::{TaskInstance, TaskKind, TaskMeta};
