//! Per-edge structural features: eleven feature types, each computed once on
//! the direct call graph and once on its transitive closure.
//!
//! Layout of a [`StructVector`]:
//!
//! | index  | direct (0..11)                       | transitive (11..22)                          |
//! |--------|--------------------------------------|----------------------------------------------|
//! | 0 / 11 | edges into caller                    | nodes reaching caller                        |
//! | 1 / 12 | edges out of caller                  | nodes reachable from caller                  |
//! | 2 / 13 | edges into callee                    | nodes reaching callee                        |
//! | 3 / 14 | edges out of callee                  | nodes reachable from callee                  |
//! | 4 / 15 | depth of caller from the entry       | same depth                                   |
//! | 5 / 16 | edges caller -> callee, any offset   | 1 if callee reachable from caller            |
//! | 6 / 17 | edges leaving the call site          | nodes reachable through the call site        |
//! | 7 / 18 | node count                           | node count                                   |
//! | 8 / 19 | edge count                           | closure edge count                           |
//! | 9 / 20 | mean out-degree                      | mean reach-out                               |
//! | 10 / 21| mean call-site fanout                | mean call-site reach                         |
//!
//! "Nodes reachable through the call site" is the union, over the site's
//! direct targets, of the target itself and everything it reaches.
//!
//! Index 16 is always 1 for an edge that exists (the edge is itself a path);
//! it is kept so the vector has the full 22 entries.

use std::collections::HashMap;
use std::io::Write;

use fixedbitset::FixedBitSet;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{CallGraph, ClosureView, Edge, NodeId};

pub const DIRECT_DIM: usize = 11;
pub const STRUCT_DIM: usize = 2 * DIRECT_DIM;

pub const FEATURE_TYPES: [&str; DIRECT_DIM] = [
    "src-node-in-deg",
    "src-node-out-deg",
    "dest-node-in-deg",
    "dest-node-out-deg",
    "depth",
    "repeated-edges",
    "L-fanout",
    "node-count",
    "edge-count",
    "avg-degree",
    "avg-L-fanout",
];

pub type StructVector = [f64; STRUCT_DIM];

type Site = (NodeId, u64);

/// Graph-wide tables shared by every edge's feature computation.
pub struct StructuralIndex<'g> {
    graph: &'g CallGraph,
    closure: ClosureView,
    depth: Vec<i64>,
    in_deg: Vec<usize>,
    out_deg: Vec<usize>,
    pair_count: HashMap<(NodeId, NodeId), usize>,
    site_fanout: HashMap<Site, usize>,
    site_reach: HashMap<Site, usize>,
    globals_direct: [f64; 4],
    globals_transitive: [f64; 4],
}

fn mean(total: usize, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

impl<'g> StructuralIndex<'g> {
    pub fn new(graph: &'g CallGraph) -> Self {
        let n = graph.node_count();
        let closure = graph.closure();
        let mut in_deg = vec![0; n];
        let mut out_deg = vec![0; n];
        let mut pair_count = HashMap::new();
        let mut site_fanout: HashMap<Site, usize> = HashMap::new();
        let mut site_targets: HashMap<Site, FixedBitSet> = HashMap::new();
        for e in graph.edges() {
            out_deg[e.caller] += 1;
            in_deg[e.callee] += 1;
            *pair_count.entry((e.caller, e.callee)).or_insert(0) += 1;
            *site_fanout.entry((e.caller, e.offset)).or_insert(0) += 1;
            let reach = site_targets
                .entry((e.caller, e.offset))
                .or_insert_with(|| FixedBitSet::with_capacity(n));
            reach.insert(e.callee);
            reach.union_with(closure.reach_set(e.callee));
        }
        let site_reach: HashMap<Site, usize> = site_targets
            .into_iter()
            .map(|(site, set)| (site, set.count_ones(..)))
            .collect();

        let edges = graph.edge_count();
        let sites = site_fanout.len();
        let closure_edges = closure.edge_count();
        let globals_direct = [n as f64, edges as f64, mean(edges, n), mean(edges, sites)];
        let globals_transitive = [
            n as f64,
            closure_edges as f64,
            mean(closure_edges, n),
            mean(site_reach.values().sum(), sites),
        ];
        StructuralIndex {
            graph,
            depth: graph.depths(),
            closure,
            in_deg,
            out_deg,
            pair_count,
            site_fanout,
            site_reach,
            globals_direct,
            globals_transitive,
        }
    }

    pub fn graph(&self) -> &'g CallGraph {
        self.graph
    }

    pub fn closure(&self) -> &ClosureView {
        &self.closure
    }

    fn check(&self, e: &Edge) -> Result<()> {
        let n = self.graph.node_count();
        if e.caller < n && e.callee < n && self.graph.find_edge(e.caller, e.callee, e.offset).is_some() {
            Ok(())
        } else {
            Err(Error::NotFound(format!(
                "edge ({}, {}, {}) in {}",
                e.caller,
                e.callee,
                e.offset,
                self.graph.program_id()
            )))
        }
    }

    fn direct_unchecked(&self, e: &Edge) -> [f64; DIRECT_DIM] {
        let [nodes, edges, avg_degree, avg_fanout] = self.globals_direct;
        [
            self.in_deg[e.caller] as f64,
            self.out_deg[e.caller] as f64,
            self.in_deg[e.callee] as f64,
            self.out_deg[e.callee] as f64,
            self.depth[e.caller] as f64,
            self.pair_count[&(e.caller, e.callee)] as f64,
            self.site_fanout[&(e.caller, e.offset)] as f64,
            nodes,
            edges,
            avg_degree,
            avg_fanout,
        ]
    }

    fn transitive_unchecked(&self, e: &Edge) -> [f64; DIRECT_DIM] {
        let cl = &self.closure;
        let [nodes, edges, avg_reach, avg_site_reach] = self.globals_transitive;
        [
            cl.reach_in(e.caller) as f64,
            cl.reach_out(e.caller) as f64,
            cl.reach_in(e.callee) as f64,
            cl.reach_out(e.callee) as f64,
            self.depth[e.caller] as f64,
            f64::from(u8::from(cl.reachable(e.caller, e.callee))),
            self.site_reach[&(e.caller, e.offset)] as f64,
            nodes,
            edges,
            avg_reach,
            avg_site_reach,
        ]
    }

    pub fn direct(&self, e: &Edge) -> Result<[f64; DIRECT_DIM]> {
        self.check(e)?;
        Ok(self.direct_unchecked(e))
    }

    pub fn transitive(&self, e: &Edge) -> Result<[f64; DIRECT_DIM]> {
        self.check(e)?;
        Ok(self.transitive_unchecked(e))
    }

    pub fn vector(&self, ordinal: usize) -> Result<StructVector> {
        let e = self.graph.edge(ordinal)?;
        let mut v = [0.0; STRUCT_DIM];
        v[..DIRECT_DIM].copy_from_slice(&self.direct_unchecked(e));
        v[DIRECT_DIM..].copy_from_slice(&self.transitive_unchecked(e));
        Ok(v)
    }
}

pub fn direct_features(g: &CallGraph, e: &Edge) -> Result<[f64; DIRECT_DIM]> {
    StructuralIndex::new(g).direct(e)
}

pub fn transitive_features(g: &CallGraph, e: &Edge) -> Result<[f64; DIRECT_DIM]> {
    StructuralIndex::new(g).transitive(e)
}

/// One vector per edge, in edge order.
pub fn featurize_graph(g: &CallGraph) -> Vec<StructVector> {
    let index = StructuralIndex::new(g);
    (0..g.edge_count())
        .into_par_iter()
        .map(|i| index.vector(i).expect("ordinal in range"))
        .collect()
}

/// Z-score normalization with statistics from a training corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    /// Population standard deviation, with zero replaced by 1.
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(corpus: &[StructVector]) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Training("cannot fit a standardizer on an empty corpus".into()));
        }
        let n = corpus.len() as f64;
        let mut mean = vec![0.0; STRUCT_DIM];
        let mut scale = vec![1.0; STRUCT_DIM];
        for d in 0..STRUCT_DIM {
            let first = corpus[0][d];
            if corpus.iter().all(|v| v[d] == first) {
                // exactly constant: rounding must not turn this into a tiny
                // nonzero deviation
                mean[d] = first;
                continue;
            }
            let m = corpus.iter().map(|v| v[d]).sum::<f64>() / n;
            let var = corpus.iter().map(|v| (v[d] - m) * (v[d] - m)).sum::<f64>() / n;
            mean[d] = m;
            scale[d] = var.sqrt();
        }
        Ok(Standardizer { mean, scale })
    }

    /// Pass-through standardizer (mean 0, scale 1).
    pub fn identity() -> Self {
        Standardizer {
            mean: vec![0.0; STRUCT_DIM],
            scale: vec![1.0; STRUCT_DIM],
        }
    }

    pub fn apply(&self, v: &StructVector) -> StructVector {
        let mut out = [0.0; STRUCT_DIM];
        for i in 0..STRUCT_DIM {
            out[i] = (v[i] - self.mean[i]) / self.scale[i];
        }
        out
    }
}

#[derive(Serialize)]
struct FeatureLine<'a> {
    ordinal: usize,
    #[serde(rename = "struct")]
    values: &'a [f64],
}

/// Writes raw (unstandardized) vectors as `*.feat.jsonl`.
pub fn write_feature_dump(vectors: &[StructVector], mut out: impl Write) -> std::io::Result<()> {
    for (ordinal, v) in vectors.iter().enumerate() {
        serde_json::to_writer(&mut out, &FeatureLine { ordinal, values: v })?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Label;

    fn graph(edges: &[(&str, &str, u64)]) -> CallGraph {
        let mut b = CallGraph::builder("t");
        for &(c, d, o) in edges {
            b.add_edge(c, d, o, Label::Unknown).unwrap();
        }
        b.build()
    }

    #[test]
    fn chain_direct_features() {
        let g = graph(&[("main", "a", 0), ("a", "b", 0)]);
        let e = g.edges()[1];
        let d = direct_features(&g, &e).unwrap();
        assert_eq!(
            d,
            [1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 3.0, 2.0, 2.0 / 3.0, 1.0]
        );
    }

    #[test]
    fn star_fanout() {
        let g = graph(&[("a", "b", 5), ("a", "c", 5), ("a", "d", 5)]);
        let d = direct_features(&g, &g.edges()[0]).unwrap();
        assert_eq!(d[6], 3.0);
        assert_eq!(d[5], 1.0);
        let t = transitive_features(&g, &g.edges()[0]).unwrap();
        assert_eq!(t[6], 3.0);
    }

    #[test]
    fn self_loop_degenerate() {
        let g = graph(&[("a", "a", 0)]);
        let d = direct_features(&g, &g.edges()[0]).unwrap();
        assert_eq!(&d[..4], &[1.0; 4]);
        assert_eq!((d[5], d[6], d[7], d[8]), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(d[4], -1.0);
    }

    #[test]
    fn chain_transitive_features() {
        let g = graph(&[("a", "b", 0), ("b", "c", 0)]);
        let t = transitive_features(&g, &g.edges()[0]).unwrap();
        assert_eq!(t[1], 2.0);
        assert_eq!(t[5], 1.0);
        assert_eq!(t[6], 2.0);
        // leaf callee
        let t = transitive_features(&g, &g.edges()[1]).unwrap();
        assert_eq!(t[3], 0.0);
        assert_eq!(t[6], 1.0);
        assert_eq!(t[8], 3.0);
    }

    #[test]
    fn foreign_edge_is_not_found() {
        let g = graph(&[("a", "b", 0)]);
        let bogus = Edge {
            caller: 0,
            callee: 1,
            offset: 9,
            label: Label::Unknown,
        };
        assert!(matches!(direct_features(&g, &bogus), Err(Error::NotFound(_))));
        let bogus = Edge { caller: 7, ..bogus };
        assert!(matches!(transitive_features(&g, &bogus), Err(Error::NotFound(_))));
    }

    #[test]
    fn featurize_empty_and_chain() {
        assert!(featurize_graph(&graph(&[])).is_empty());
        let g = graph(&[("main", "a", 0), ("a", "b", 0)]);
        let rows = featurize_graph(&g);
        assert_eq!(rows.len(), 2);
        assert_eq!(
            &rows[1][..DIRECT_DIM],
            &[1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 3.0, 2.0, 2.0 / 3.0, 1.0]
        );
        assert_eq!(rows[1][DIRECT_DIM + 4], rows[1][4]);
    }

    #[test]
    fn permuted_input_permutes_rows() {
        let edges = [("main", "a", 0), ("a", "b", 0), ("a", "c", 0), ("c", "a", 2)];
        let g = graph(&edges);
        let mut rev = edges;
        rev.reverse();
        let h = graph(&rev);
        let (rg, rh) = (featurize_graph(&g), featurize_graph(&h));
        for i in 0..edges.len() {
            assert_eq!(rg[i], rh[edges.len() - 1 - i]);
        }
    }

    #[test]
    fn standardizer_cases() {
        assert!(Standardizer::fit(&[]).is_err());
        let v = [3.5; STRUCT_DIM];
        let s = Standardizer::fit(&[v, v, v]).unwrap();
        assert_eq!(s.apply(&v), [0.0; STRUCT_DIM]);

        let s = Standardizer::fit(&[[0.0; STRUCT_DIM], [2.0; STRUCT_DIM]]).unwrap();
        assert_eq!(s.apply(&[0.0; STRUCT_DIM]), [-1.0; STRUCT_DIM]);
        assert_eq!(s.apply(&[2.0; STRUCT_DIM]), [1.0; STRUCT_DIM]);
    }

    #[test]
    fn standardized_corpus_has_zero_mean() {
        let g = graph(&[
            ("main", "a", 0),
            ("main", "b", 1),
            ("a", "c", 0),
            ("a", "d", 0),
            ("b", "c", 4),
            ("c", "a", 0),
        ]);
        let rows = featurize_graph(&g);
        let s = Standardizer::fit(&rows).unwrap();
        let z: Vec<_> = rows.iter().map(|r| s.apply(r)).collect();
        for d in 0..STRUCT_DIM {
            let m: f64 = z.iter().map(|r| r[d]).sum::<f64>() / z.len() as f64;
            assert!(m.abs() <= 1e-9, "dim {d}: {m}");
        }
    }

    #[test]
    fn feature_dump_format() {
        let g = graph(&[("main", "a", 0)]);
        let mut buf = Vec::new();
        write_feature_dump(&featurize_graph(&g), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.trim()).unwrap();
        assert_eq!(v["ordinal"], 0);
        assert_eq!(v["struct"].as_array().unwrap().len(), STRUCT_DIM);
    }
}
