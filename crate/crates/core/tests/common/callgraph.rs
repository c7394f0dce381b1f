//! Random small callgraphs and an exhaustive path-enumeration oracle for small graphs. Reach is defined by
//! the existence of a simple call path instead of a breadth-first search, and
//! the fact rules are restated directly over those paths.

use std::collections::{BTreeMap, BTreeSet};

use pagespray::analyzer::*;
use proptest::prelude::*;

const ALLOC: &str = "alloc_page";
const COPY: &str = "copy_from_user";
const REMAP: &str = "vm_insert_page";
const TERMINAL: &str = "kmalloc";
const RECORDS: &[&str] = &["r", "s"];
const PATHS: &[&str] = &["p", "p.q", "p[1].q", "t"];

#[derive(Debug, Clone)]
pub struct Spec {
    pub n: usize,
    arch: Vec<bool>,
    syscall: Vec<bool>,
    subsystem: Vec<u8>,
    mmap: Vec<bool>,
    pub edges: Vec<(usize, usize, bool, u32)>,
    facts: Vec<Vec<(u8, u8, u8)>>,
    child_field: bool,
    max_depth: usize,
}

pub fn name(i: usize) -> String {
    match i {
        0 => ALLOC.into(),
        1 => COPY.into(),
        2 => REMAP.into(),
        3 => TERMINAL.into(),
        _ => format!("f{i}"),
    }
}

fn member(spec: &Spec, b: usize) -> String {
    if spec.mmap[b] {
        format!("f{b}_mmap")
    } else {
        format!("op{b}")
    }
}

pub fn build(spec: &Spec) -> (CallGraphDoc, RootConfig) {
    let mut doc = CallGraphDoc::empty();
    for i in 0..spec.n {
        doc.functions.push(FunctionDecl {
            id: 100 + i as u32,
            name: name(i),
            subsystem: ["a", "b"][spec.subsystem[i] as usize].into(),
            arch: spec.arch[i].then(|| "sparc".into()),
            syscall: spec.syscall[i].then(|| format!("sys{i}")),
        });
    }
    let mut members = BTreeMap::new();
    for b in 0..spec.n {
        if spec.mmap[b] {
            members.insert(member(spec, b), 100 + b as u32);
        }
    }
    for &(a, b, direct, oi) in &spec.edges {
        let kind = if direct {
            EdgeKind::Direct
        } else {
            members.insert(member(spec, b), 100 + b as u32);
            EdgeKind::ViaTable {
                table: "ops".into(),
                member: member(spec, b),
            }
        };
        doc.edges.push(Edge {
            caller: 100 + a as u32,
            callee: 100 + b as u32,
            kind,
            order_index: oi,
        });
    }
    if !members.is_empty() {
        doc.function_tables.push(FunctionTable {
            name: "ops".into(),
            members,
        });
    }
    for (i, list) in spec.facts.iter().enumerate() {
        for (k, &(rec, path, op)) in list.iter().enumerate() {
            doc.facts.push(AccessFact {
                function: 100 + i as u32,
                record_name: RECORDS[rec as usize].into(),
                field_path: PATHS[path as usize].into(),
                op: [FactOp::AllocStore, FactOp::CopyWrite, FactOp::RemapUse][op as usize],
                order_index: 2 * k as u32 + 1,
            });
        }
    }
    if spec.child_field {
        doc.child_fields.push(ChildField {
            parent: "s".into(),
            field: "p".into(),
            child: "r".into(),
        });
    }
    let one = |s: &str| BTreeSet::from([s.to_string()]);
    let cfg = RootConfig {
        alloc_roots: one(ALLOC),
        copy_roots: one(COPY),
        remap_roots: one(REMAP),
        terminal_nodes: one(TERMINAL),
        max_depth: spec.max_depth,
    };
    (doc, cfg)
}

/// Plain view of a document for the oracle: adjacency by index.
struct View<'a> {
    doc: &'a CallGraphDoc,
    cfg: &'a RootConfig,
    idx: BTreeMap<u32, usize>,
}

impl<'a> View<'a> {
    fn new(doc: &'a CallGraphDoc, cfg: &'a RootConfig) -> Self {
        let idx = doc.functions.iter().enumerate().map(|(i, f)| (f.id, i)).collect();
        Self { doc, cfg, idx }
    }

    fn n(&self) -> usize {
        self.doc.functions.len()
    }

    fn name(&self, i: usize) -> &str {
        &self.doc.functions[i].name
    }

    fn callees(&self, i: usize) -> Vec<usize> {
        self.doc
            .edges
            .iter()
            .filter(|e| self.idx[&e.caller] == i)
            .map(|e| self.idx[&e.callee])
            .collect()
    }

    fn blocked(&self, i: usize) -> bool {
        self.cfg.terminal_nodes.contains(self.name(i)) || self.doc.functions[i].arch.is_some()
    }

    fn mmap_set(&self) -> BTreeSet<usize> {
        self.doc
            .function_tables
            .iter()
            .flat_map(|t| t.members.iter())
            .filter(|(m, _)| m.as_str() == "mmap" || m.ends_with("_mmap"))
            .map(|(_, id)| self.idx[id])
            .collect()
    }

    /// Does a simple path `from -> ... -> t` exist with `ok` holding on every
    /// node before `t`, `target(t)`, and at most `limit` edges?
    fn path_exists(
        &self,
        from: usize,
        limit: usize,
        ok: &dyn Fn(usize, usize) -> bool,
        target: &dyn Fn(usize) -> bool,
    ) -> bool {
        fn go(
            v: &View,
            cur: usize,
            len: usize,
            limit: usize,
            on: &mut Vec<bool>,
            ok: &dyn Fn(usize, usize) -> bool,
            target: &dyn Fn(usize) -> bool,
        ) -> bool {
            if len == limit {
                return false;
            }
            for next in v.callees(cur) {
                if on[next] {
                    continue;
                }
                if target(next) {
                    return true;
                }
                if ok(next, len + 1) {
                    on[next] = true;
                    let found = go(v, next, len + 1, limit, on, ok, target);
                    on[next] = false;
                    if found {
                        return true;
                    }
                }
            }
            false
        }
        let mut on = vec![false; self.n()];
        on[from] = true;
        go(self, from, 0, limit, &mut on, ok, target)
    }

    /// Functions (not roots, not blocked) with a path into `roots` whose
    /// intermediate nodes are neither roots, blocked nor in `stop`.
    fn reach(&self, roots: &BTreeSet<String>, stop: &BTreeSet<usize>) -> BTreeSet<usize> {
        let is_root = |i: usize| roots.contains(self.name(i));
        (0..self.n())
            .filter(|&i| !is_root(i) && !self.blocked(i))
            .filter(|&i| {
                self.path_exists(
                    i,
                    self.cfg.max_depth,
                    &|x, _| !is_root(x) && !self.blocked(x) && !stop.contains(&x),
                    &|x| is_root(x),
                )
            })
            .collect()
    }
}

fn norm(p: &str) -> String {
    p.split('.').map(|s| s.split('[').next().unwrap()).collect::<Vec<_>>().join(".")
}

pub fn oracle(doc: &CallGraphDoc, cfg: &RootConfig) -> BTreeSet<(u32, CandidateKind)> {
    let v = View::new(doc, cfg);
    let names = |set: &BTreeSet<String>| -> BTreeSet<usize> {
        (0..v.n()).filter(|&i| set.contains(v.name(i))).collect()
    };
    let ra = v.reach(&cfg.alloc_roots, &BTreeSet::new());
    let rc = v.reach(&cfg.copy_roots, &BTreeSet::new());
    let (roots_a, roots_c) = (names(&cfg.alloc_roots), names(&cfg.copy_roots));
    let mut by_node: Vec<Vec<&AccessFact>> = vec![Vec::new(); v.n()];
    for f in &doc.facts {
        by_node[v.idx[&f.function]].push(f);
    }
    let facts_of = |i: usize| by_node[i].iter().copied();
    let mut out = BTreeSet::new();

    for &n in ra.intersection(&rc) {
        // (position, own, fact)
        let mut view: Vec<((u32, u32, u32), bool, &AccessFact)> =
            facts_of(n).map(|f| ((f.order_index, 0, 0), true, f)).collect();
        for e in &doc.edges {
            let (a, b) = (v.idx[&e.caller], v.idx[&e.callee]);
            let on_path = ra.contains(&b) || rc.contains(&b) || roots_a.contains(&b) || roots_c.contains(&b);
            if a == n && b != n && e.kind == EdgeKind::Direct && on_path {
                view.extend(facts_of(b).map(|f| ((e.order_index, 1, f.order_index), false, f)));
            }
        }
        let accepted = view.iter().any(|(pa, own_a, a)| {
            view.iter().any(|(pc, own_c, c)| {
                a.op == FactOp::AllocStore
                    && c.op == FactOp::CopyWrite
                    && a.record_name == c.record_name
                    && norm(&a.field_path) == norm(&c.field_path)
                    && pa < pc
                    && (*own_a || *own_c)
            })
        });
        if accepted {
            out.insert((doc.functions[n].id, CandidateKind::CopyWrite));
        }
    }

    let mmaps = v.mmap_set();
    let rr = v.reach(&cfg.remap_roots, &mmaps);
    let nests = |alloc: &AccessFact, remap: &AccessFact| -> bool {
        let (pa, pr) = (norm(&alloc.field_path), norm(&remap.field_path));
        if alloc.record_name == remap.record_name {
            return pa == pr || pa.rsplit_once('.').map(|x| x.0) == Some(&pr) || pr.rsplit_once('.').map(|x| x.0) == Some(&pa);
        }
        doc.child_fields.iter().any(|cf| {
            (cf.parent == remap.record_name && norm(&cf.field) == pr && cf.child == alloc.record_name)
                || (cf.parent == alloc.record_name && norm(&cf.field) == pa && cf.child == remap.record_name)
        })
    };
    for &m in mmaps.iter().filter(|m| rr.contains(m)) {
        let sub = &doc.functions[m].subsystem;
        let forward: BTreeSet<usize> = (0..v.n())
            .filter(|&x| x == m || v.path_exists(m, usize::MAX, &|y, _| rr.contains(&y), &|y| y == x && rr.contains(&y)))
            .collect();
        let stores: BTreeSet<usize> = ra
            .iter()
            .copied()
            .filter(|&s| &doc.functions[s].subsystem == sub)
            .filter(|&s| {
                facts_of(s).any(|a| {
                    a.op == FactOp::AllocStore
                        && forward
                            .iter()
                            .any(|&x| facts_of(x).any(|r| r.op == FactOp::RemapUse && nests(a, r)))
                })
            })
            .collect();
        if stores.is_empty() {
            continue;
        }
        out.insert((doc.functions[m].id, CandidateKind::Remapping));
        for &f in &ra {
            let fd = &doc.functions[f];
            if f == m || &fd.subsystem != sub || fd.syscall.is_none() {
                continue;
            }
            let leads = stores.contains(&f)
                || v.path_exists(
                    f,
                    usize::MAX,
                    &|y, _| !cfg.terminal_nodes.contains(v.name(y)) && doc.functions[y].arch.is_none(),
                    &|y| stores.contains(&y),
                );
            if leads {
                out.insert((fd.id, CandidateKind::Remapping));
            }
        }
    }
    out
}

pub fn analysed(doc: &CallGraphDoc, cfg: &RootConfig) -> BTreeSet<(u32, CandidateKind)> {
    run_analysis(doc, cfg)
        .unwrap()
        .candidates
        .iter()
        .map(|c| (c.function_id, c.kind))
        .collect()
}

pub fn spec() -> impl Strategy<Value = Spec> {
    (4usize..=12).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::bool::weighted(0.1), n),
            prop::collection::vec(prop::bool::weighted(0.5), n),
            prop::collection::vec(0u8..2, n),
            prop::collection::vec(prop::bool::weighted(0.2), n),
            prop::collection::vec((0..n, 0..n, prop::bool::weighted(0.8), 0u32..8), 0..=3 * n),
            prop::collection::vec(prop::collection::vec((0u8..2, 0u8..4, 0u8..3), 0..=3), n),
            any::<bool>(),
            1usize..=8,
        )
            .prop_map(move |(arch, syscall, subsystem, mmap, edges, facts, child_field, max_depth)| Spec {
                n,
                arch,
                syscall,
                subsystem,
                mmap,
                edges,
                facts,
                child_field,
                max_depth,
            })
    })
}


/// `count` graphs drawn from [`spec`] with a fixed runner seed.
pub fn sample_specs(count: usize) -> Vec<Spec> {
    use proptest::strategy::ValueTree;
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let strategy = spec();
    (0..count)
        .map(|_| strategy.new_tree(&mut runner).expect("generator").current())
        .collect()
}
