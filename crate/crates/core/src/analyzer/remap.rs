use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::copy_write::normalize_path;
use super::graph::{AccessFact, ChildField, FactOp, Graph, RootConfig};
use super::reach::{backward_reach_until, Reach};
use super::{Anchor, Candidate, CandidateKind, Evidence, FactRef, FieldRelation, RejectReason, Rejection};

/// How an allocation store relates to a remap use: the same field, or one
/// level of nesting in either direction.
pub fn relate(alloc: &AccessFact, remap: &AccessFact, child_fields: &[ChildField]) -> Option<FieldRelation> {
    let pa = normalize_path(&alloc.field_path);
    let pr = normalize_path(&remap.field_path);
    if alloc.record_name == remap.record_name {
        return if pa == pr {
            Some(FieldRelation::Same)
        } else if pa.len() == pr.len() + 1 && pa.starts_with(&pr) {
            Some(FieldRelation::Child)
        } else if pr.len() == pa.len() + 1 && pr.starts_with(&pa) {
            Some(FieldRelation::Parent)
        } else {
            None
        };
    }
    let declared = |parent: &str, field: &[&str], child: &str| {
        child_fields
            .iter()
            .any(|cf| cf.parent == parent && cf.child == child && normalize_path(&cf.field) == field)
    };
    if declared(&remap.record_name, &pr, &alloc.record_name) {
        Some(FieldRelation::Child)
    } else if declared(&alloc.record_name, &pa, &remap.record_name) {
        Some(FieldRelation::Parent)
    } else {
        None
    }
}

/// Nodes reachable forward from `start` while staying inside `within`.
fn forward_within(graph: &Graph, start: usize, within: &Reach) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        for c in graph.callees(n) {
            if within.contains(c) && seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen
}

/// Nodes that reach some member of `targets` without passing through a
/// terminal or arch-tagged function. Includes the targets.
fn ancestors_of(graph: &Graph, targets: &BTreeSet<usize>, blocked: &BTreeSet<usize>) -> BTreeSet<usize> {
    let mut seen = targets.clone();
    let mut queue: VecDeque<usize> = targets.iter().copied().collect();
    while let Some(n) = queue.pop_front() {
        for c in graph.callers(n) {
            if blocked.contains(&c) || graph.is_arch(c) {
                continue;
            }
            if seen.insert(c) {
                queue.push_back(c);
            }
        }
    }
    seen
}

/// Remap reach with mmap implementations as stop points.
pub(crate) fn remap_reach(graph: &Graph, cfg: &RootConfig) -> Reach {
    let stop: BTreeSet<usize> = graph.mmap_functions().keys().copied().collect();
    backward_reach_until(graph, &cfg.remap_roots, &cfg.terminal_nodes, cfg.max_depth, &stop)
}

/// Pairs mmap implementations that reach a remap root with allocation stores
/// made inside the same subsystem. Accepted pairs yield the mmap function and
/// every syscall-annotated subsystem entry that leads to the matched store.
pub fn remap_analyze(graph: &Graph, cfg: &RootConfig, reach_alloc: &Reach) -> (Vec<Candidate>, Vec<Rejection>) {
    let reach_remap = remap_reach(graph, cfg);
    let blocked = graph.resolve_names(&cfg.terminal_nodes);
    let mut candidates = Vec::new();
    let mut rejections = Vec::new();
    for (&m, entry) in graph.mmap_functions() {
        if !reach_remap.contains(m) {
            continue;
        }
        let decl = graph.function(m);
        let reject = |reason| Rejection {
            function: decl.name.clone(),
            kind: CandidateKind::Remapping,
            reason,
        };
        let remap_facts: Vec<(usize, &AccessFact)> = forward_within(graph, m, &reach_remap)
            .into_iter()
            .flat_map(|n| graph.facts(n).iter().map(move |f| (n, f)))
            .filter(|(_, f)| f.op == FactOp::RemapUse)
            .collect();
        let alloc_facts: Vec<(usize, &AccessFact)> = reach_alloc
            .nodes()
            .filter(|&n| graph.function(n).subsystem == decl.subsystem)
            .flat_map(|n| graph.facts(n).iter().map(move |f| (n, f)))
            .filter(|(_, f)| f.op == FactOp::AllocStore)
            .collect();
        if remap_facts.is_empty() {
            rejections.push(reject(RejectReason::MissingFacts));
            continue;
        }
        if alloc_facts.is_empty() {
            rejections.push(reject(RejectReason::NoAllocationStore));
            continue;
        }
        let mut matched: Vec<(usize, &AccessFact, usize, &AccessFact, FieldRelation)> = Vec::new();
        for &(rn, rf) in &remap_facts {
            for &(an, af) in &alloc_facts {
                if let Some(rel) = relate(af, rf, graph.child_fields()) {
                    matched.push((an, af, rn, rf, rel));
                }
            }
        }
        let Some(&(an, af, rn, rf, rel)) = matched.first() else {
            rejections.push(reject(RejectReason::RecordMismatch));
            continue;
        };
        let evidence = |alloc_chain: Vec<usize>| Evidence {
            anchor: Anchor::MmapMember {
                function: decl.name.clone(),
                table: entry.table.clone(),
                member: entry.member.clone(),
            },
            alloc_fact: FactRef::new(graph, an, af),
            use_fact: FactRef::new(graph, rn, rf),
            relation: rel,
            alloc_chain: alloc_chain.into_iter().map(|n| graph.name(n).to_string()).collect(),
            use_chain: reach_remap
                .chain(m)
                .expect("reached mmap function")
                .into_iter()
                .map(|n| graph.name(n).to_string())
                .collect(),
        };
        let store_nodes: BTreeSet<usize> = matched.iter().map(|t| t.0).collect();
        candidates.push(Candidate {
            function: decl.name.clone(),
            function_id: decl.id,
            kind: CandidateKind::Remapping,
            subsystem: decl.subsystem.clone(),
            syscall: decl.syscall.clone(),
            evidence: evidence(reach_alloc.chain(an).expect("store node reaches allocation")),
        });
        let leads_to_store = ancestors_of(graph, &store_nodes, &blocked);
        let mut entries: BTreeMap<usize, ()> = BTreeMap::new();
        for f in reach_alloc.nodes() {
            let fd = graph.function(f);
            if f != m && fd.subsystem == decl.subsystem && fd.syscall.is_some() && leads_to_store.contains(&f) {
                entries.insert(f, ());
            }
        }
        for f in entries.into_keys() {
            let fd = graph.function(f);
            candidates.push(Candidate {
                function: fd.name.clone(),
                function_id: fd.id,
                kind: CandidateKind::Remapping,
                subsystem: fd.subsystem.clone(),
                syscall: fd.syscall.clone(),
                evidence: evidence(reach_alloc.chain(f).expect("in allocation reach")),
            });
        }
    }
    (candidates, rejections)
}
