//! Static call graphs: nodes are functions identified by signature, edges are
//! `(caller, callee, offset)` call-site tuples with an optional ground-truth
//! label.
//!
//! Edge order is ingestion order. Everything that is aligned per edge
//! (feature rows, embedding rows, predictions) is indexed by that ordinal.

mod closure;
mod io;

use std::borrow::Borrow;
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

pub use closure::ClosureView;
pub use io::{
    load_callgraph, load_callgraph_with, load_sources, parse_callgraph, parse_sources,
    program_id_from_path, save_callgraph, save_sources, write_callgraph, write_sources,
};

use crate::error::{Error, Result};

pub type NodeId = usize;

/// Depth reported for nodes that cannot be reached from the entry, or for
/// every node when the graph has no unique entry.
pub const UNREACHABLE_DEPTH: i64 = -1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FunctionSig(String);

impl FunctionSig {
    pub fn new(text: impl Into<String>) -> Result<Self> {
        let text = text.into();
        if text.is_empty() {
            return Err(Error::Format("function signature must be non-empty".into()));
        }
        Ok(FunctionSig(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// The bare method name: everything before the parameter list, after the
    /// last `.`, `:`, `/` or `#` separator.
    pub fn simple_name(&self) -> &str {
        let head = self.0.split('(').next().unwrap_or("");
        head.rsplit(['.', ':', '/', '#']).next().unwrap_or(head).trim()
    }
}

impl fmt::Display for FunctionSig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

// Hash and Eq are derived from the inner String, so they agree with str's.
impl Borrow<str> for FunctionSig {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl AsRef<str> for FunctionSig {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    TruePositive,
    FalsePositive,
    Unknown,
}

impl Label {
    pub fn from_code(code: Option<u8>) -> Option<Label> {
        match code {
            None => Some(Label::Unknown),
            Some(0) => Some(Label::FalsePositive),
            Some(1) => Some(Label::TruePositive),
            Some(_) => None,
        }
    }

    pub fn code(self) -> Option<u8> {
        match self {
            Label::TruePositive => Some(1),
            Label::FalsePositive => Some(0),
            Label::Unknown => None,
        }
    }

    /// Class index used by the classifier: 0 = false positive, 1 = true positive.
    pub fn class(self) -> Option<usize> {
        self.code().map(usize::from)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub caller: NodeId,
    pub callee: NodeId,
    pub offset: u64,
    pub label: Label,
}

/// Signature-level identity of an edge, comparable across graphs of the same
/// program.
pub type EdgeKey = (FunctionSig, FunctionSig, u64);

/// Selects the entry node by simple name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EntryPattern {
    pub simple_name: String,
}

impl Default for EntryPattern {
    fn default() -> Self {
        EntryPattern {
            simple_name: "main".to_owned(),
        }
    }
}

impl EntryPattern {
    pub fn matches(&self, sig: &FunctionSig) -> bool {
        sig.simple_name() == self.simple_name
    }
}

#[derive(Debug, Clone)]
pub struct CallGraph {
    program_id: String,
    nodes: Vec<FunctionSig>,
    index: HashMap<FunctionSig, NodeId>,
    edges: Vec<Edge>,
    entry: Option<NodeId>,
}

impl CallGraph {
    pub fn builder(program_id: impl Into<String>) -> CallGraphBuilder {
        CallGraphBuilder::new(program_id)
    }

    pub fn program_id(&self) -> &str {
        &self.program_id
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[FunctionSig] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, ordinal: usize) -> Result<&Edge> {
        self.edges.get(ordinal).ok_or(Error::Index {
            index: ordinal,
            len: self.edges.len(),
        })
    }

    pub fn sig(&self, id: NodeId) -> &FunctionSig {
        &self.nodes[id]
    }

    pub fn node_id(&self, sig: &str) -> Option<NodeId> {
        self.index.get(sig).copied()
    }

    pub fn entry(&self) -> Option<NodeId> {
        self.entry
    }

    /// Ordinal of the edge with this exact triple, if any.
    pub fn find_edge(&self, caller: NodeId, callee: NodeId, offset: u64) -> Option<usize> {
        self.edges
            .iter()
            .position(|e| e.caller == caller && e.callee == callee && e.offset == offset)
    }

    pub fn edge_key(&self, e: &Edge) -> EdgeKey {
        (
            self.nodes[e.caller].clone(),
            self.nodes[e.callee].clone(),
            e.offset,
        )
    }

    pub fn edge_keys(&self) -> HashSet<EdgeKey> {
        self.edges.iter().map(|e| self.edge_key(e)).collect()
    }

    /// Keys of edges labeled true positive.
    pub fn truth_keys(&self) -> HashSet<EdgeKey> {
        self.edges
            .iter()
            .filter(|e| e.label == Label::TruePositive)
            .map(|e| self.edge_key(e))
            .collect()
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.edges.iter().all(|e| e.label != Label::Unknown)
    }

    /// Same node set, keeping only the edges whose ordinal satisfies `keep`.
    /// Survivors keep their relative order.
    pub fn retain_edges(&self, mut keep: impl FnMut(usize, &Edge) -> bool) -> CallGraph {
        let edges = self
            .edges
            .iter()
            .enumerate()
            .filter(|(i, e)| keep(*i, e))
            .map(|(_, e)| *e)
            .collect();
        CallGraph {
            program_id: self.program_id.clone(),
            nodes: self.nodes.clone(),
            index: self.index.clone(),
            edges,
            entry: self.entry,
        }
    }

    /// The ground-truth graph: same nodes, only true-positive edges.
    pub fn ground_truth(&self) -> CallGraph {
        self.retain_edges(|_, e| e.label == Label::TruePositive)
    }

    /// Distinct direct successors of every node, sorted.
    pub fn successors(&self) -> Vec<Vec<NodeId>> {
        let mut succ = vec![Vec::new(); self.nodes.len()];
        for e in &self.edges {
            succ[e.caller].push(e.callee);
        }
        for s in &mut succ {
            s.sort_unstable();
            s.dedup();
        }
        succ
    }

    /// Shortest-path depth of every node from the entry, in edges.
    pub fn depths(&self) -> Vec<i64> {
        let mut depth = vec![UNREACHABLE_DEPTH; self.nodes.len()];
        let Some(entry) = self.entry else {
            return depth;
        };
        let succ = self.successors();
        let mut queue = VecDeque::from([entry]);
        depth[entry] = 0;
        while let Some(u) = queue.pop_front() {
            for &v in &succ[u] {
                if depth[v] == UNREACHABLE_DEPTH {
                    depth[v] = depth[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        depth
    }

    pub fn shortest_depth(&self, sig: &str) -> Result<i64> {
        let id = self
            .node_id(sig)
            .ok_or_else(|| Error::NotFound(format!("node {sig}")))?;
        Ok(self.depths()[id])
    }

    pub fn closure(&self) -> ClosureView {
        ClosureView::new(self)
    }
}

pub struct CallGraphBuilder {
    program_id: String,
    entry_pattern: EntryPattern,
    nodes: Vec<FunctionSig>,
    index: HashMap<FunctionSig, NodeId>,
    edges: Vec<Edge>,
    seen: HashSet<(NodeId, NodeId, u64)>,
}

impl CallGraphBuilder {
    pub fn new(program_id: impl Into<String>) -> Self {
        CallGraphBuilder {
            program_id: program_id.into(),
            entry_pattern: EntryPattern::default(),
            nodes: Vec::new(),
            index: HashMap::new(),
            edges: Vec::new(),
            seen: HashSet::new(),
        }
    }

    pub fn entry_pattern(mut self, pattern: EntryPattern) -> Self {
        self.entry_pattern = pattern;
        self
    }

    pub fn add_node(&mut self, sig: &str) -> Result<NodeId> {
        if let Some(&id) = self.index.get(sig) {
            return Ok(id);
        }
        let sig = FunctionSig::new(sig)?;
        let id = self.nodes.len();
        self.index.insert(sig.clone(), id);
        self.nodes.push(sig);
        Ok(id)
    }

    /// Adds an edge, returning `false` without inserting if the triple
    /// already exists.
    pub fn add_edge(&mut self, caller: &str, callee: &str, offset: u64, label: Label) -> Result<bool> {
        let caller = self.add_node(caller)?;
        let callee = self.add_node(callee)?;
        if !self.seen.insert((caller, callee, offset)) {
            return Ok(false);
        }
        self.edges.push(Edge {
            caller,
            callee,
            offset,
            label,
        });
        Ok(true)
    }

    pub fn build(self) -> CallGraph {
        let mut matches = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, s)| self.entry_pattern.matches(s))
            .map(|(i, _)| i);
        let entry = match (matches.next(), matches.next()) {
            (Some(only), None) => Some(only),
            _ => None,
        };
        CallGraph {
            program_id: self.program_id,
            nodes: self.nodes,
            index: self.index,
            edges: self.edges,
            entry,
        }
    }
}

/// Per-function source text. Library functions commonly have none.
#[derive(Debug, Clone, Default)]
pub struct SourceMap {
    code: HashMap<String, String>,
    order: Vec<String>,
}

impl SourceMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, sig: impl Into<String>, code: impl Into<String>) {
        let sig = sig.into();
        if self.code.insert(sig.clone(), code.into()).is_none() {
            self.order.push(sig);
        }
    }

    /// `None` means "no source available", which is distinct from an empty
    /// function body.
    pub fn get(&self, sig: &str) -> Option<&str> {
        self.code.get(sig).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Entries in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.order
            .iter()
            .map(|s| (s.as_str(), self.code[s].as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn graph(edges: &[(&str, &str, u64)]) -> CallGraph {
        let mut b = CallGraph::builder("t");
        for &(c, d, o) in edges {
            b.add_edge(c, d, o, Label::Unknown).unwrap();
        }
        b.build()
    }

    #[test]
    fn simple_names() {
        let s = FunctionSig::new("com.acme.App.main([Ljava/lang/String;)V").unwrap();
        assert_eq!(s.simple_name(), "main");
        assert_eq!(FunctionSig::new("main").unwrap().simple_name(), "main");
        assert_eq!(FunctionSig::new("Foo::bar()").unwrap().simple_name(), "bar");
        assert!(FunctionSig::new("").is_err());
    }

    #[test]
    fn depth_on_chain() {
        let g = graph(&[("main", "f", 0), ("f", "g", 0)]);
        assert_eq!(g.shortest_depth("main").unwrap(), 0);
        assert_eq!(g.shortest_depth("f").unwrap(), 1);
        assert_eq!(g.shortest_depth("g").unwrap(), 2);
        assert!(matches!(g.shortest_depth("zz"), Err(Error::NotFound(_))));
    }

    #[test]
    fn isolated_node_has_sentinel_depth() {
        let mut b = CallGraph::builder("t");
        b.add_edge("main", "f", 0, Label::Unknown).unwrap();
        b.add_node("h").unwrap();
        let g = b.build();
        assert_eq!(g.shortest_depth("h").unwrap(), UNREACHABLE_DEPTH);
    }

    #[test]
    fn ambiguous_or_missing_entry_means_no_depths() {
        let g = graph(&[("a.main()", "b.main()", 0), ("b.main()", "c", 0)]);
        assert_eq!(g.entry(), None);
        assert!(g.depths().iter().all(|&d| d == UNREACHABLE_DEPTH));
        let g = graph(&[("a", "b", 0)]);
        assert_eq!(g.entry(), None);
        assert_eq!(g.shortest_depth("a").unwrap(), -1);
    }

    #[test]
    fn custom_entry_pattern() {
        let mut b = CallGraph::builder("t").entry_pattern(EntryPattern {
            simple_name: "start".into(),
        });
        b.add_edge("x.start()", "y", 0, Label::Unknown).unwrap();
        let g = b.build();
        assert_eq!(g.shortest_depth("y").unwrap(), 1);
    }

    #[test]
    fn duplicate_triples_are_refused_by_builder() {
        let mut b = CallGraph::builder("t");
        assert!(b.add_edge("a", "b", 0, Label::Unknown).unwrap());
        assert!(!b.add_edge("a", "b", 0, Label::TruePositive).unwrap());
        assert!(b.add_edge("a", "b", 1, Label::Unknown).unwrap());
        assert_eq!(b.build().edge_count(), 2);
    }

    #[test]
    fn ground_truth_keeps_nodes() {
        let mut b = CallGraph::builder("t");
        b.add_edge("main", "a", 0, Label::TruePositive).unwrap();
        b.add_edge("main", "b", 0, Label::FalsePositive).unwrap();
        let g = b.build();
        let t = g.ground_truth();
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.edge_count(), 1);
        assert_eq!(t.truth_keys().len(), 1);
    }

    #[test]
    fn source_map_distinguishes_absent_from_empty() {
        let mut s = SourceMap::new();
        s.insert("a", "");
        assert_eq!(s.get("a"), Some(""));
        assert_eq!(s.get("b"), None);
    }
}
