//! Independent reference implementations used by the integration and
//! acceptance tests. Everything here is deliberately naive: repeated BFS,
//! linear scans and nested loops over plain edge lists.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashSet, VecDeque};

use cgprune::graph::{CallGraph, Label};
use cgprune::model::{Ablation, FusionConfig, FusionModel};
use cgprune::nn::{self, AdamConfig, AdamState, Parameterized};
use cgprune::prune;
use cgprune::structural::Standardizer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct RawEdge {
    pub caller: String,
    pub callee: String,
    pub offset: u64,
    pub label: Label,
}

pub struct RandomGraph {
    pub edges: Vec<RawEdge>,
    /// Names that the generator gave an entry-point simple name.
    pub entry_names: Vec<String>,
}

impl RandomGraph {
    pub fn build(&self, id: &str) -> CallGraph {
        let mut b = CallGraph::builder(id);
        for e in &self.edges {
            assert!(b.add_edge(&e.caller, &e.callee, e.offset, e.label).unwrap());
        }
        b.build()
    }

    pub fn nodes(&self) -> BTreeSet<String> {
        self.edges
            .iter()
            .flat_map(|e| [e.caller.clone(), e.callee.clone()])
            .collect()
    }

    /// The unique entry-named node present in the graph, if exactly one is.
    pub fn entry(&self) -> Option<String> {
        let nodes = self.nodes();
        let present: Vec<&String> = self.entry_names.iter().filter(|n| nodes.contains(*n)).collect();
        (present.len() == 1).then(|| present[0].clone())
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_label(rng: &mut impl Rng) -> Label {
    match rng.random_range(0..5) {
        0 => Label::Unknown,
        1 | 2 => Label::FalsePositive,
        _ => Label::TruePositive,
    }
}

/// A random multigraph with at most `max_nodes` nodes, self-loops, repeated
/// caller/callee pairs at different offsets, and zero, one or two
/// entry-named nodes.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> RandomGraph {
    let n = rng.random_range(1..=max_nodes);
    let mut names: Vec<String> = (0..n).map(|i| format!("pkg.C{}.f{i}()", i % 3)).collect();
    let mut entry_names = Vec::new();
    match rng.random_range(0..10) {
        0..=5 => {
            names[0] = "app.Main.main(java.lang.String[])".into();
            entry_names.push(names[0].clone());
        }
        6 if n >= 2 => {
            names[0] = "main".into();
            names[1] = "other.main()".into();
            entry_names.extend([names[0].clone(), names[1].clone()]);
        }
        _ => {}
    }
    let want = rng.random_range(0..=3 * n);
    let max_offset = rng.random_range(1..=4u64);
    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for _ in 0..want {
        let caller = names[rng.random_range(0..n)].clone();
        let callee = names[rng.random_range(0..n)].clone();
        let offset = rng.random_range(0..max_offset);
        if seen.insert((caller.clone(), callee.clone(), offset)) {
            edges.push(RawEdge {
                caller,
                callee,
                offset,
                label: random_label(rng),
            });
        }
    }
    RandomGraph { edges, entry_names }
}

fn successors(edges: &[RawEdge], u: &str) -> BTreeSet<String> {
    edges.iter().filter(|e| e.caller == u).map(|e| e.callee.clone()).collect()
}

/// Nodes reachable from `u` by a path of length >= 1.
pub fn bfs_reach(edges: &[RawEdge], u: &str) -> BTreeSet<String> {
    let mut seen = BTreeSet::new();
    let mut queue: VecDeque<String> = successors(edges, u).into_iter().collect();
    while let Some(v) = queue.pop_front() {
        if seen.insert(v.clone()) {
            queue.extend(successors(edges, &v));
        }
    }
    seen
}

pub fn bfs_depth(edges: &[RawEdge], entry: Option<&str>, target: &str) -> i64 {
    let Some(entry) = entry else { return -1 };
    let mut dist = vec![(entry.to_owned(), 0i64)];
    let mut queue = VecDeque::from([(entry.to_owned(), 0i64)]);
    while let Some((u, d)) = queue.pop_front() {
        if u == target {
            return d;
        }
        for v in successors(edges, &u) {
            if !dist.iter().any(|(n, _)| *n == v) {
                dist.push((v.clone(), d + 1));
                queue.push_back((v, d + 1));
            }
        }
    }
    -1
}

fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// The 22 structural values of every edge, recomputed from scratch.
pub fn brute_features(graph: &RandomGraph) -> Vec<[f64; 22]> {
    let edges = &graph.edges;
    let entry = graph.entry();
    let nodes = graph.nodes();
    let reach_out = |u: &str| bfs_reach(edges, u).len();
    let reach_in = |v: &str| nodes.iter().filter(|u| bfs_reach(edges, u).contains(v)).count();
    let in_deg = |v: &str| edges.iter().filter(|e| e.callee == v).count();
    let out_deg = |u: &str| edges.iter().filter(|e| e.caller == u).count();

    let mut sites: Vec<(String, u64)> = Vec::new();
    for e in edges {
        if !sites.contains(&(e.caller.clone(), e.offset)) {
            sites.push((e.caller.clone(), e.offset));
        }
    }
    let site_reach = |caller: &str, offset: u64| {
        let mut union = BTreeSet::new();
        for e in edges.iter().filter(|e| e.caller == caller && e.offset == offset) {
            union.insert(e.callee.clone());
            union.extend(bfs_reach(edges, &e.callee));
        }
        union.len()
    };

    let v = nodes.len();
    let closure_edges: usize = nodes.iter().map(|u| reach_out(u)).sum();
    let avg_degree = mean(edges.len() as f64, v);
    let avg_fanout = mean(edges.len() as f64, sites.len());
    let avg_reach = mean(closure_edges as f64, v);
    let avg_site_reach = mean(sites.iter().map(|(c, o)| site_reach(c, *o) as f64).sum(), sites.len());

    edges
        .iter()
        .map(|e| {
            let depth = bfs_depth(edges, entry.as_deref(), &e.caller) as f64;
            let repeated = edges.iter().filter(|x| x.caller == e.caller && x.callee == e.callee).count();
            let fanout = edges.iter().filter(|x| x.caller == e.caller && x.offset == e.offset).count();
            let connected = bfs_reach(edges, &e.caller).contains(&e.callee);
            [
                in_deg(&e.caller) as f64,
                out_deg(&e.caller) as f64,
                in_deg(&e.callee) as f64,
                out_deg(&e.callee) as f64,
                depth,
                repeated as f64,
                fanout as f64,
                v as f64,
                edges.len() as f64,
                avg_degree,
                avg_fanout,
                reach_in(&e.caller) as f64,
                reach_out(&e.caller) as f64,
                reach_in(&e.callee) as f64,
                reach_out(&e.callee) as f64,
                depth,
                f64::from(u8::from(connected)),
                site_reach(&e.caller, e.offset) as f64,
                v as f64,
                closure_edges as f64,
                avg_reach,
                avg_site_reach,
            ]
        })
        .collect()
}

/// (P, R, F) by linear scans, with the 0-conventions.
pub fn naive_prf<T: PartialEq>(selected: &[T], truth: &[T]) -> (f64, f64, f64) {
    let hits = selected.iter().filter(|s| truth.contains(s)).count() as f64;
    let p = if selected.is_empty() { 0.0 } else { hits / selected.len() as f64 };
    let r = if truth.is_empty() { 0.0 } else { hits / truth.len() as f64 };
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f)
}

/// Monomorphic (caller, offset) sites by nested loops over an edge list.
pub fn brute_monomorphic(edges: &[(String, String, u64)]) -> Vec<(String, u64)> {
    let mut out: Vec<(String, u64)> = Vec::new();
    for (caller, _, offset) in edges {
        let mut callees: Vec<&String> = Vec::new();
        for (c2, d2, o2) in edges {
            if c2 == caller && o2 == offset && !callees.contains(&d2) {
                callees.push(d2);
            }
        }
        if callees.len() == 1 && !out.contains(&(caller.clone(), *offset)) {
            out.push((caller.clone(), *offset));
        }
    }
    out
}

pub fn triples(g: &CallGraph) -> Vec<(String, String, u64)> {
    g.edges()
        .iter()
        .map(|e| (g.sig(e.caller).to_string(), g.sig(e.callee).to_string(), e.offset))
        .collect()
}

/// Mean per-program (P, R) at threshold `tau`, or `None` if some program
/// with edges would keep none of them.
pub fn naive_mean_pr(corpus: &[(Vec<bool>, Vec<f64>)], tau: f64) -> Option<(f64, f64)> {
    let mut sp = 0.0;
    let mut sr = 0.0;
    for (labels, probs) in corpus {
        let kept: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] >= tau).collect();
        if !probs.is_empty() && kept.is_empty() {
            return None;
        }
        let truth: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
        let (p, r, _) = naive_prf(&kept, &truth);
        sp += p;
        sr += r;
    }
    let n = corpus.len() as f64;
    Some((sp / n, sr / n))
}

pub fn labeled_graph(id: &str, labels: &[bool]) -> CallGraph {
    let mut b = CallGraph::builder(id);
    for (i, &l) in labels.iter().enumerate() {
        let label = if l { Label::TruePositive } else { Label::FalsePositive };
        b.add_edge(&format!("f{}", i % 4), &format!("g{i}"), i as u64, label).unwrap();
    }
    b.build()
}

pub fn random_calibration_corpus(rng: &mut impl Rng) -> Vec<(Vec<bool>, Vec<f64>)> {
    (0..rng.random_range(1..=5))
        .map(|_| {
            let n = rng.random_range(1..=30);
            let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let coarse = rng.random_bool(0.5);
            let probs = (0..n)
                .map(|_| {
                    let p: f64 = rng.random_range(0.0..=1.0);
                    if coarse {
                        (p * 100.0).round() / 100.0
                    } else {
                        p
                    }
                })
                .collect();
            (labels, probs)
        })
        .collect()
}

struct Scalar(f64);

impl Parameterized for Scalar {
    fn param_count(&self) -> usize {
        1
    }

    fn param_mut(&mut self, _: usize) -> &mut f64 {
        &mut self.0
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&mut f64)) {
        f(&mut self.0);
    }
}

/// Two Adam steps on a scalar (theta0 = 1, grads 0.5 then -0.25, lr 0.1),
/// against values worked out by hand in exact decimal arithmetic.
#[allow(clippy::excessive_precision)]
pub fn adam_trace_error() -> f64 {
    let expected = [0.900_000_001_999_999_960_000_000_8, 0.873_366_298_707_846_162_559_376_4];
    let mut theta = Scalar(1.0);
    let mut adam = AdamState::new(AdamConfig::with_lr(0.1), 1);
    let mut worst: f64 = 0.0;
    for (g, want) in [0.5, -0.25].into_iter().zip(expected) {
        adam.step(&mut theta, &[g]).unwrap();
        worst = worst.max((theta.0 - want).abs());
    }
    worst
}

/// Max relative gradient error over `configs` random fusion models that
/// are not within 1e-3 of a ReLU kink. Returns (worst error, configs checked).
pub fn fusion_gradient_check(configs: usize, seed: u64) -> (f64, usize) {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut attempt = 0u64;
    while checked < configs {
        attempt += 1;
        assert!(attempt < 50 * configs as u64, "too many kinked draws");
        let ablation = [Ablation::Both, Ablation::SemOnly, Ablation::StructOnly][rng.random_range(0..3)];
        let mut m = FusionModel::init(FusionConfig {
            sem_dim: rng.random_range(1..=16),
            hidden: rng.random_range(1..=8),
            ablation,
            seed: rng.random(),
            class_weights: [1.0, 1.0],
            ..FusionConfig::default()
        })
        .unwrap();
        m.standardizer = Standardizer {
            mean: (0..22).map(|_| rng.random_range(-1.0..1.0)).collect(),
            scale: (0..22).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        let sem: Vec<f64> = (0..m.config.sem_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut st = [0.0; 22];
        st.iter_mut().for_each(|v| *v = rng.random_range(-3.0..3.0));
        let mut zs = Vec::new();
        if let Some(l) = &m.sem_proj {
            zs.extend(l.pre_activation(&sem).unwrap());
        }
        if let Some(l) = &m.struct_proj {
            zs.extend(l.pre_activation(&m.standardizer.apply(&st)).unwrap());
        }
        if zs.iter().any(|z| z.abs() < 1e-3) {
            continue;
        }
        let label = rng.random_range(0..2);
        let (_, grads) = m.loss_and_gradient(&sem, &st, label).unwrap();
        let check = nn::gradient_check(&mut m, &grads, 1e-4, |m| m.loss(&sem, &st, label).unwrap());
        worst = worst.max(check.max_relative_error);
        checked += 1;
    }
    (worst, checked)
}

/// Kept edge ordinals under a threshold, via the public pruning API.
pub fn kept_at(g: &CallGraph, probs: &[f64], tau: f64) -> BTreeSet<(String, String, u64)> {
    triples(&prune::prune_threshold(g, probs, tau).unwrap()).into_iter().collect()
}
