//! Static search for page-spraying callsites over a callgraph document.
//!
//! Copy-write callsites sit where a backward trace from page allocators meets
//! a backward trace from user-copy routines, and must store the page into a
//! record field before copying into that same field. Remapping callsites have
//! no such meeting point: an mmap handler that reaches a remap primitive is
//! paired with an allocation store made in its own subsystem.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub mod copy_write;
pub mod corpus;
pub mod graph;
pub mod reach;
pub mod remap;

pub use copy_write::{copy_write_check, normalize_path};
pub use graph::{
    is_mmap_member, load_graph, AccessFact, CallGraphDoc, ChildField, Edge, EdgeKind, FactOp, FunctionDecl,
    FunctionTable, Graph, MmapEntry, RootConfig, DEFAULT_MAX_DEPTH, GRAPH_VERSION,
};
pub use reach::{backward_reach, crossing_nodes, Reach};
pub use remap::{relate, remap_analyze};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateKind {
    CopyWrite,
    Remapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldRelation {
    Same,
    /// The allocation store targets a field nested one level below the use.
    Child,
    /// The use targets a field nested one level below the store.
    Parent,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Anchor {
    CrossingNode { function: String },
    MmapMember { function: String, table: String, member: String },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FactRef {
    pub function: String,
    pub record_name: String,
    pub field_path: String,
    pub order_index: u32,
}

impl FactRef {
    pub(crate) fn new(graph: &Graph, node: usize, f: &AccessFact) -> Self {
        Self {
            function: graph.name(node).to_string(),
            record_name: f.record_name.clone(),
            field_path: f.field_path.clone(),
            order_index: f.order_index,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Evidence {
    pub anchor: Anchor,
    pub alloc_fact: FactRef,
    /// The copy-write or remap use matched against the store.
    pub use_fact: FactRef,
    pub relation: FieldRelation,
    /// `[function, ..., allocation root]`.
    pub alloc_chain: Vec<String>,
    /// `[function, ..., copy or remap root]`.
    pub use_chain: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Candidate {
    pub function: String,
    pub function_id: u32,
    pub kind: CandidateKind,
    pub subsystem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syscall: Option<String>,
    pub evidence: Evidence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    /// No store/use pair of the needed kinds.
    MissingFacts,
    /// Matching fields, but every copy precedes every store.
    Ordering,
    FieldMismatch,
    /// A matching pair exists only inside callees; the node just forwards.
    CalleeOnly,
    /// No allocation store anywhere in the mmap handler's subsystem.
    NoAllocationStore,
    /// Stores exist in the subsystem but none nests with the remap use.
    RecordMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Rejection {
    pub function: String,
    pub kind: CandidateKind,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub version: u32,
    pub functions: usize,
    pub edges: usize,
    /// False when the allocation and copy traces never meet.
    pub copy_write_valid: bool,
    pub crossing_nodes: Vec<String>,
    pub mmap_functions: Vec<String>,
    pub candidates: Vec<Candidate>,
    pub rejections: Vec<Rejection>,
}

impl AnalysisReport {
    pub fn candidate_names(&self) -> Vec<&str> {
        self.candidates.iter().map(|c| c.function.as_str()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Full pipeline over a loaded graph.
pub fn analyze(graph: &Graph, cfg: &RootConfig) -> AnalysisReport {
    let reach_alloc = backward_reach(graph, &cfg.alloc_roots, &cfg.terminal_nodes, cfg.max_depth);
    let reach_copy = backward_reach(graph, &cfg.copy_roots, &cfg.terminal_nodes, cfg.max_depth);
    let crossing = crossing_nodes(&reach_alloc, &reach_copy);
    let mut candidates = Vec::new();
    let mut rejections = Vec::new();
    for &n in &crossing {
        match copy_write_check(graph, n, &reach_alloc, &reach_copy) {
            Ok(c) => candidates.push(c),
            Err(r) => rejections.push(r),
        }
    }
    let (remaps, remap_rejections) = remap_analyze(graph, cfg, &reach_alloc);
    candidates.extend(remaps);
    rejections.extend(remap_rejections);

    candidates.sort_by(|a, b| (&a.function, a.kind, a.function_id).cmp(&(&b.function, b.kind, b.function_id)));
    let mut seen = BTreeSet::new();
    candidates.retain(|c| seen.insert((c.function_id, c.kind)));
    rejections.sort();
    rejections.dedup();
    let sorted_names = |nodes: &mut dyn Iterator<Item = usize>| {
        let mut v: Vec<String> = nodes.map(|n| graph.name(n).to_string()).collect();
        v.sort();
        v
    };
    AnalysisReport {
        version: GRAPH_VERSION,
        functions: graph.len(),
        edges: graph.doc().edges.len(),
        copy_write_valid: !crossing.is_empty(),
        crossing_nodes: sorted_names(&mut crossing.iter().copied()),
        mmap_functions: sorted_names(&mut graph.mmap_functions().keys().copied()),
        candidates,
        rejections,
    }
}

/// Validates `doc` and runs the full analysis with `cfg`.
pub fn run_analysis(doc: &CallGraphDoc, cfg: &RootConfig) -> Result<AnalysisReport> {
    cfg.validate()?;
    let graph = load_graph(doc.clone())?;
    Ok(analyze(&graph, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_graph_gives_empty_report() {
        let r = run_analysis(&CallGraphDoc::empty(), &RootConfig::default()).unwrap();
        assert!(r.candidates.is_empty());
        assert!(!r.copy_write_valid);
    }
}
