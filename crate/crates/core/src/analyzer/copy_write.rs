use super::graph::{AccessFact, EdgeKind, FactOp, Graph};
use super::reach::Reach;
use super::{Anchor, Candidate, CandidateKind, Evidence, FactRef, FieldRelation, RejectReason, Rejection};

/// Dotted path with index brackets dropped: `frag[0].page` -> `frag.page`.
pub fn normalize_path(path: &str) -> Vec<&str> {
    path.split('.')
        .map(|seg| seg.split('[').next().unwrap_or(seg))
        .filter(|s| !s.is_empty())
        .collect()
}

/// A fact placed in the crossing node's instruction order. Facts of a direct
/// callee sit at the call's position, after the node's own fact there.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) struct Position(u32, u32, u32);

pub(crate) fn aggregated_facts<'g>(
    graph: &'g Graph,
    node: usize,
    reach_alloc: &Reach,
    reach_copy: &Reach,
) -> Vec<(Position, usize, &'g AccessFact)> {
    let mut out: Vec<(Position, usize, &AccessFact)> = graph
        .facts(node)
        .iter()
        .map(|f| (Position(f.order_index, 0, 0), node, f))
        .collect();
    for &e in graph.out_edges(node) {
        let edge = graph.edge(e);
        if edge.kind != EdgeKind::Direct {
            continue;
        }
        let c = graph.node_of(edge.callee);
        if c == node {
            continue;
        }
        let on_path = reach_alloc.contains(c)
            || reach_copy.contains(c)
            || reach_alloc.roots().contains(&c)
            || reach_copy.roots().contains(&c);
        if !on_path {
            continue;
        }
        out.extend(
            graph
                .facts(c)
                .iter()
                .map(|f| (Position(edge.order_index, 1, f.order_index), c, f)),
        );
    }
    out.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
    out
}

fn names(graph: &Graph, chain: Vec<usize>) -> Vec<String> {
    chain.into_iter().map(|n| graph.name(n).to_string()).collect()
}

/// Accepts a crossing node when an allocation store precedes a copy-write to
/// the same record field. Facts come from the node and from its direct
/// callees on either root path; at least one side of the pair must be the
/// node's own, so a bare wrapper around a callsite is not itself one.
pub fn copy_write_check(
    graph: &Graph,
    node: usize,
    reach_alloc: &Reach,
    reach_copy: &Reach,
) -> Result<Candidate, Rejection> {
    let facts = aggregated_facts(graph, node, reach_alloc, reach_copy);
    let allocs: Vec<_> = facts.iter().filter(|f| f.2.op == FactOp::AllocStore).collect();
    let copies: Vec<_> = facts.iter().filter(|f| f.2.op == FactOp::CopyWrite).collect();
    let reject = |reason| Rejection {
        function: graph.name(node).to_string(),
        kind: CandidateKind::CopyWrite,
        reason,
    };
    if allocs.is_empty() || copies.is_empty() {
        return Err(reject(RejectReason::MissingFacts));
    }
    let key = |f: &AccessFact| (f.record_name.clone(), normalize_path(&f.field_path).join("."));
    let mut same_field = false;
    let mut callee_only = false;
    for a in &allocs {
        for c in &copies {
            if key(a.2) != key(c.2) {
                continue;
            }
            same_field = true;
            if a.0 < c.0 && a.1 != node && c.1 != node {
                callee_only = true;
            } else if a.0 < c.0 {
                let decl = graph.function(node);
                return Ok(Candidate {
                    function: decl.name.clone(),
                    function_id: decl.id,
                    kind: CandidateKind::CopyWrite,
                    subsystem: decl.subsystem.clone(),
                    syscall: decl.syscall.clone(),
                    evidence: Evidence {
                        anchor: Anchor::CrossingNode {
                            function: decl.name.clone(),
                        },
                        alloc_fact: FactRef::new(graph, a.1, a.2),
                        use_fact: FactRef::new(graph, c.1, c.2),
                        relation: FieldRelation::Same,
                        alloc_chain: names(graph, reach_alloc.chain(node).expect("crossing node")),
                        use_chain: names(graph, reach_copy.chain(node).expect("crossing node")),
                    },
                });
            }
        }
    }
    Err(reject(if callee_only {
        RejectReason::CalleeOnly
    } else if same_field {
        RejectReason::Ordering
    } else {
        RejectReason::FieldMismatch
    }))
}
