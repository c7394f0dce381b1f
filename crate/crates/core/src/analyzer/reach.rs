use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::graph::Graph;

/// Functions that reach a root set, each with one shortest witness path.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Reach {
    /// node -> (distance to nearest root, next hop towards it).
    nodes: BTreeMap<usize, (usize, usize)>,
    roots: BTreeSet<usize>,
}

impl Reach {
    pub fn contains(&self, node: usize) -> bool {
        self.nodes.contains_key(&node)
    }

    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn roots(&self) -> &BTreeSet<usize> {
        &self.roots
    }

    pub fn distance(&self, node: usize) -> Option<usize> {
        self.nodes.get(&node).map(|&(d, _)| d)
    }

    /// Witness path `[node, ..., root]`; `None` when `node` is not in the set.
    pub fn chain(&self, node: usize) -> Option<Vec<usize>> {
        let mut path = vec![node];
        let mut cur = node;
        while let Some(&(_, next)) = self.nodes.get(&cur) {
            path.push(next);
            cur = next;
        }
        (path.len() > 1).then_some(path)
    }

    pub fn intersection(&self, other: &Reach) -> BTreeSet<usize> {
        self.nodes().filter(|n| other.contains(*n)).collect()
    }
}

/// Breadth-first search over reversed edges from every function named in
/// `roots`. Terminal and arch-tagged functions are neither entered nor
/// expanded; nodes in `stop` are entered but not expanded. Roots themselves
/// are not part of the result.
pub(crate) fn backward_reach_until(
    graph: &Graph,
    roots: &BTreeSet<String>,
    terminals: &BTreeSet<String>,
    max_depth: usize,
    stop: &BTreeSet<usize>,
) -> Reach {
    let root_nodes = graph.resolve_names(roots);
    let blocked = graph.resolve_names(terminals);
    let mut reach = Reach {
        nodes: BTreeMap::new(),
        roots: root_nodes.clone(),
    };
    let mut queue: VecDeque<(usize, usize)> = root_nodes.iter().map(|&r| (r, 0)).collect();
    while let Some((node, depth)) = queue.pop_front() {
        if depth == max_depth {
            continue;
        }
        if depth > 0 && stop.contains(&node) {
            continue;
        }
        let mut callers: Vec<usize> = graph.callers(node).collect();
        callers.sort_unstable();
        callers.dedup();
        for c in callers {
            if root_nodes.contains(&c) || reach.nodes.contains_key(&c) || blocked.contains(&c) || graph.is_arch(c) {
                continue;
            }
            reach.nodes.insert(c, (depth + 1, node));
            queue.push_back((c, depth + 1));
        }
    }
    reach
}

/// Functions from which some root is reachable within `max_depth` calls
/// without passing through a terminal or arch-specific function.
pub fn backward_reach(graph: &Graph, roots: &BTreeSet<String>, terminals: &BTreeSet<String>, max_depth: usize) -> Reach {
    backward_reach_until(graph, roots, terminals, max_depth, &BTreeSet::new())
}

/// Functions on both an allocation path and a copy path.
pub fn crossing_nodes(reach_alloc: &Reach, reach_copy: &Reach) -> BTreeSet<usize> {
    reach_alloc.intersection(reach_copy)
}
