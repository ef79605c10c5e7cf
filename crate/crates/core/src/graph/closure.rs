use fixedbitset::FixedBitSet;

use super::{CallGraph, NodeId};

/// Reachability over the simple projection of a call graph: offsets and
/// parallel edges are collapsed, and `reachable(u, v)` needs a path of at
/// least one edge, so `u` reaches itself only through a cycle.
#[derive(Debug, Clone)]
pub struct ClosureView {
    reach: Vec<FixedBitSet>,
    reach_in: Vec<usize>,
}

impl ClosureView {
    pub fn new(g: &CallGraph) -> Self {
        let n = g.node_count();
        let succ = g.successors();
        let mut reach = Vec::with_capacity(n);
        let mut stack = Vec::new();
        for u in 0..n {
            let mut seen = FixedBitSet::with_capacity(n);
            stack.extend_from_slice(&succ[u]);
            while let Some(v) = stack.pop() {
                if !seen.put(v) {
                    stack.extend_from_slice(&succ[v]);
                }
            }
            reach.push(seen);
        }
        let mut reach_in = vec![0; n];
        for set in &reach {
            for v in set.ones() {
                reach_in[v] += 1;
            }
        }
        ClosureView { reach, reach_in }
    }

    pub fn reachable(&self, from: NodeId, to: NodeId) -> bool {
        self.reach[from].contains(to)
    }

    pub fn reach_out(&self, u: NodeId) -> usize {
        self.reach[u].count_ones(..)
    }

    pub fn reach_in(&self, v: NodeId) -> usize {
        self.reach_in[v]
    }

    pub fn reach_set(&self, u: NodeId) -> &FixedBitSet {
        &self.reach[u]
    }

    /// Number of `(u, v)` pairs with `reachable(u, v)`.
    pub fn edge_count(&self) -> usize {
        self.reach_in.iter().sum()
    }

    pub fn node_count(&self) -> usize {
        self.reach.len()
    }
}

#[cfg(test)]
mod tests {
    use crate::graph::{CallGraph, Label};

    fn graph(edges: &[(&str, &str, u64)]) -> CallGraph {
        let mut b = CallGraph::builder("t");
        for &(c, d, o) in edges {
            b.add_edge(c, d, o, Label::Unknown).unwrap();
        }
        b.build()
    }

    #[test]
    fn two_chain() {
        let g = graph(&[("a", "b", 0), ("b", "c", 0)]);
        let cl = g.closure();
        let (a, c) = (g.node_id("a").unwrap(), g.node_id("c").unwrap());
        assert!(cl.reachable(a, c));
        assert!(!cl.reachable(c, a));
        assert!(!cl.reachable(a, a));
        assert_eq!(cl.reach_out(a), 2);
        assert_eq!(cl.reach_in(c), 2);
        assert_eq!(cl.edge_count(), 3);
    }

    #[test]
    fn self_loop() {
        let g = graph(&[("a", "a", 0)]);
        let cl = g.closure();
        assert!(cl.reachable(0, 0));
        assert_eq!(cl.reach_out(0), 1);
    }

    #[test]
    fn parallel_edges_collapse() {
        let g = graph(&[("a", "b", 0), ("a", "b", 3), ("b", "a", 1)]);
        let cl = g.closure();
        assert_eq!(cl.reach_out(0), 2);
        assert_eq!(cl.reach_in(0), 2);
        assert_eq!(cl.edge_count(), 4);
    }
}
