use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const GRAPH_VERSION: u32 = 1;
pub const DEFAULT_MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub id: u32,
    pub name: String,
    #[serde(default)]
    pub subsystem: String,
    /// Architecture-specific code is excluded from every reach set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<String>,
    /// User-facing entry syscall; carried through to candidates verbatim.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub syscall: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EdgeKind {
    #[default]
    Direct,
    ViaTable { table: String, member: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub caller: u32,
    pub callee: u32,
    #[serde(default)]
    pub kind: EdgeKind,
    /// Position of the call in the caller's instruction order, shared with
    /// the caller's own facts.
    #[serde(default)]
    pub order_index: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionTable {
    pub name: String,
    pub members: BTreeMap<String, u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactOp {
    AllocStore,
    CopyWrite,
    RemapUse,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessFact {
    pub function: u32,
    pub record_name: String,
    pub field_path: String,
    pub op: FactOp,
    pub order_index: u32,
}

/// `parent.field` holds (or points to) a `child` record.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ChildField {
    pub parent: String,
    pub field: String,
    pub child: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootConfig {
    pub alloc_roots: BTreeSet<String>,
    pub copy_roots: BTreeSet<String>,
    pub remap_roots: BTreeSet<String>,
    #[serde(default)]
    pub terminal_nodes: BTreeSet<String>,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
}

fn default_max_depth() -> usize {
    DEFAULT_MAX_DEPTH
}

fn set(names: &[&str]) -> BTreeSet<String> {
    names.iter().map(|s| s.to_string()).collect()
}

impl Default for RootConfig {
    fn default() -> Self {
        Self {
            alloc_roots: set(&["alloc_pages", "__alloc_pages", "alloc_page", "__get_free_pages", "vmalloc_user"]),
            copy_roots: set(&[
                "copy_from_user",
                "copy_page_from_iter",
                "copy_from_iter",
                "skb_copy_to_page_nocache",
                "skb_copy_datagram_from_iter",
            ]),
            remap_roots: set(&["vm_insert_page", "vm_map_pages", "remap_pfn_range", "remap_vmalloc_range"]),
            terminal_nodes: set(&["kmalloc", "__kmalloc", "kmem_cache_alloc", "kvmalloc", "kmalloc_node"]),
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl RootConfig {
    pub fn validate(&self) -> Result<()> {
        for (label, roots) in [
            ("alloc_roots", &self.alloc_roots),
            ("copy_roots", &self.copy_roots),
            ("remap_roots", &self.remap_roots),
        ] {
            if let Some(n) = roots.intersection(&self.terminal_nodes).next() {
                return Err(SimError::InvalidGraph(format!("{label} member {n} is also a terminal node")));
            }
        }
        Ok(())
    }
}

/// Interchange format: callgraph plus pre-digested dataflow facts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraphDoc {
    #[serde(default = "default_version")]
    pub version: u32,
    pub functions: Vec<FunctionDecl>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub function_tables: Vec<FunctionTable>,
    #[serde(default)]
    pub facts: Vec<AccessFact>,
    #[serde(default)]
    pub child_fields: Vec<ChildField>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub root_config: Option<RootConfig>,
}

fn default_version() -> u32 {
    GRAPH_VERSION
}

impl CallGraphDoc {
    pub fn empty() -> Self {
        Self {
            version: GRAPH_VERSION,
            functions: Vec::new(),
            edges: Vec::new(),
            function_tables: Vec::new(),
            facts: Vec::new(),
            child_fields: Vec::new(),
            root_config: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| SimError::InvalidGraph(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn digest(&self) -> String {
        crate::content_digest(&serde_json::to_vec(self).expect("document serializes"))
    }
}

/// Table member through which an mmap implementation is dispatched.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MmapEntry {
    pub table: String,
    pub member: String,
}

/// A validated document with adjacency indices. Node handles are positions
/// in `doc.functions`.
#[derive(Debug, Clone)]
pub struct Graph {
    doc: CallGraphDoc,
    index: HashMap<u32, usize>,
    by_name: BTreeMap<String, Vec<usize>>,
    out: Vec<Vec<usize>>,
    inc: Vec<Vec<usize>>,
    /// Sorted by order_index.
    facts: Vec<Vec<AccessFact>>,
    mmap: BTreeMap<usize, MmapEntry>,
}

/// Table members whose name marks them as an mmap handler.
pub fn is_mmap_member(member: &str) -> bool {
    member == "mmap" || member.ends_with("_mmap")
}

/// Validates `doc` and builds in/out adjacency, per-function fact lists and
/// the mmap-function list.
pub fn load_graph(doc: CallGraphDoc) -> Result<Graph> {
    if doc.version != GRAPH_VERSION {
        return Err(SimError::InvalidGraph(format!("unsupported version {}", doc.version)));
    }
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut by_name: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, f) in doc.functions.iter().enumerate() {
        if index.insert(f.id, i).is_some() {
            return Err(SimError::InvalidGraph(format!("duplicate function id {}", f.id)));
        }
        by_name.entry(f.name.clone()).or_default().push(i);
    }
    let resolve = |id: u32, what: &str| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| SimError::InvalidGraph(format!("{what} references undeclared function {id}")))
    };
    let n = doc.functions.len();
    let mut out = vec![Vec::new(); n];
    let mut inc = vec![Vec::new(); n];
    for (e_idx, e) in doc.edges.iter().enumerate() {
        let a = resolve(e.caller, "edge")?;
        let b = resolve(e.callee, "edge")?;
        if let EdgeKind::ViaTable { table, member } = &e.kind {
            let t = doc
                .function_tables
                .iter()
                .find(|t| &t.name == table)
                .ok_or_else(|| SimError::InvalidGraph(format!("edge names unknown table {table}")))?;
            if t.members.get(member) != Some(&e.callee) {
                return Err(SimError::InvalidGraph(format!(
                    "edge via {table}.{member} does not match the table entry"
                )));
            }
        }
        out[a].push(e_idx);
        inc[b].push(e_idx);
    }
    let mut mmap = BTreeMap::new();
    for t in &doc.function_tables {
        for (member, id) in &t.members {
            let f = resolve(*id, "function table")?;
            if is_mmap_member(member) {
                mmap.entry(f).or_insert(MmapEntry {
                    table: t.name.clone(),
                    member: member.clone(),
                });
            }
        }
    }
    let mut facts = vec![Vec::new(); n];
    for fact in &doc.facts {
        let f = resolve(fact.function, "fact")?;
        facts[f].push(fact.clone());
    }
    for (f, list) in facts.iter().enumerate() {
        if list.windows(2).any(|w| w[0].order_index >= w[1].order_index) {
            return Err(SimError::InvalidGraph(format!(
                "facts of {} are not in strictly increasing order",
                doc.functions[f].name
            )));
        }
    }
    if let Some(cfg) = &doc.root_config {
        cfg.validate()?;
    }
    Ok(Graph {
        doc,
        index,
        by_name,
        out,
        inc,
        facts,
        mmap,
    })
}

impl Graph {
    pub fn doc(&self) -> &CallGraphDoc {
        &self.doc
    }

    pub fn len(&self) -> usize {
        self.doc.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc.functions.is_empty()
    }

    pub fn function(&self, node: usize) -> &FunctionDecl {
        &self.doc.functions[node]
    }

    pub fn name(&self, node: usize) -> &str {
        &self.doc.functions[node].name
    }

    pub fn nodes_named(&self, name: &str) -> &[usize] {
        self.by_name.get(name).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Nodes for every name in `names`, ascending.
    pub fn resolve_names<'a>(&self, names: impl IntoIterator<Item = &'a String>) -> BTreeSet<usize> {
        names.into_iter().flat_map(|n| self.nodes_named(n).iter().copied()).collect()
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.doc.edges[e]
    }

    /// Outgoing edge indices of `node`.
    pub fn out_edges(&self, node: usize) -> &[usize] {
        &self.out[node]
    }

    /// Incoming edge indices of `node`.
    pub fn in_edges(&self, node: usize) -> &[usize] {
        &self.inc[node]
    }

    /// Node handle of a function id; ids were validated at load.
    pub fn node_of(&self, id: u32) -> usize {
        self.index[&id]
    }

    pub fn callers(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.inc[node].iter().map(|&e| self.node_of(self.doc.edges[e].caller))
    }

    pub fn callees(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.out[node].iter().map(|&e| self.node_of(self.doc.edges[e].callee))
    }

    pub fn facts(&self, node: usize) -> &[AccessFact] {
        &self.facts[node]
    }

    pub fn mmap_functions(&self) -> &BTreeMap<usize, MmapEntry> {
        &self.mmap
    }

    pub fn is_arch(&self, node: usize) -> bool {
        self.doc.functions[node].arch.is_some()
    }

    pub fn child_fields(&self) -> &[ChildField] {
        &self.doc.child_fields
    }
}
