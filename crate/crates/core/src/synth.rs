//! Seeded synthetic corpora of labeled call graphs with pseudo-source.
//!
//! Every function belongs to one of a fixed set of topics shared by the whole
//! corpus; its pseudo-source mixes tokens from its topic's vocabulary with
//! tokens from a common pool. Per program:
//!
//! 1. `main` plus `nodes` functions, each with a random topic.
//! 2. A true backbone: every function is called from some earlier function,
//!    preferably one of its own topic, so everything is reachable from `main`.
//! 3. Extra true calls at fresh call sites.
//! 4. Planted polymorphic sites: one call site whose 2+ same-topic targets
//!    are all true. Fanout alone cannot tell these apart from imprecision.
//! 5. False edges added as extra targets at existing call sites. With
//!    probability `semantic_signal` the false target is drawn from another
//!    topic; otherwise it is drawn exactly like a true target.
//!
//! With `semantic_signal = 0` labels carry no information in the tokens.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{save_callgraph, save_sources, CallGraph, Label, SourceMap};
use crate::nn::{seeded_rng, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub programs: usize,
    /// Inclusive range of non-entry functions per program.
    pub nodes: [usize; 2],
    pub topics: usize,
    /// Distinct tokens across all topic vocabularies and the common pool.
    pub vocab_size: usize,
    /// Fraction of the vocabulary reserved for the common pool.
    pub common_vocab_fraction: f64,
    /// Inclusive range of tokens per function body.
    pub tokens_per_function: [usize; 2],
    /// Probability a body token comes from the function's own topic.
    pub topic_token_share: f64,
    /// Extra true call sites per function, beyond the backbone.
    pub true_edge_density: f64,
    /// Probability that a true call crosses topics.
    pub cross_topic_true_rate: f64,
    /// False edges per true edge.
    pub false_edge_density: f64,
    /// Probability that a function hosts a planted polymorphic site.
    pub polymorphic_site_rate: f64,
    /// Inclusive fanout range of planted polymorphic sites.
    pub polymorphic_fanout: [usize; 2],
    pub semantic_signal: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            programs: 25,
            nodes: [40, 80],
            topics: 6,
            vocab_size: 300,
            common_vocab_fraction: 0.3,
            tokens_per_function: [12, 30],
            topic_token_share: 0.75,
            true_edge_density: 0.6,
            cross_topic_true_rate: 0.2,
            false_edge_density: 1.0,
            polymorphic_site_rate: 0.15,
            polymorphic_fanout: [2, 4],
            semantic_signal: 0.95,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth: {m}")));
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if self.programs == 0 {
            return fail("programs must be at least 1");
        }
        if self.nodes[0] < 1 || self.nodes[0] > self.nodes[1] {
            return fail("nodes range must satisfy 1 <= min <= max");
        }
        if self.topics == 0 {
            return fail("topics must be at least 1");
        }
        if !prob(self.common_vocab_fraction) || self.common_vocab_fraction == 1.0 {
            return fail("common_vocab_fraction must be in [0, 1)");
        }
        let topic_tokens = self.vocab_size - (self.vocab_size as f64 * self.common_vocab_fraction) as usize;
        if topic_tokens < 2 * self.topics {
            return fail("vocab_size too small for the number of topics");
        }
        if self.tokens_per_function[0] == 0 || self.tokens_per_function[0] > self.tokens_per_function[1] {
            return fail("tokens_per_function range must satisfy 1 <= min <= max");
        }
        for (name, p) in [
            ("topic_token_share", self.topic_token_share),
            ("cross_topic_true_rate", self.cross_topic_true_rate),
            ("polymorphic_site_rate", self.polymorphic_site_rate),
            ("semantic_signal", self.semantic_signal),
        ] {
            if !prob(p) {
                return Err(Error::Config(format!("synth: {name} must be in [0, 1]")));
            }
        }
        if !(self.true_edge_density >= 0.0 && self.false_edge_density >= 0.0) {
            return fail("densities must be non-negative");
        }
        if self.polymorphic_fanout[0] < 2 || self.polymorphic_fanout[0] > self.polymorphic_fanout[1] {
            return fail("polymorphic_fanout range must satisfy 2 <= min <= max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthProgram {
    pub graph: CallGraph,
    pub sources: SourceMap,
    /// Topic of each node, indexed by node id.
    pub topics: Vec<usize>,
}

struct Vocabulary {
    topics: Vec<Vec<String>>,
    common: Vec<String>,
}

const SYLLABLES: [&str; 24] = [
    "ba", "ko", "ri", "ta", "mu", "ne", "so", "li", "va", "de", "pu", "ga", "zo", "fi", "ha", "ju",
    "we", "xo", "cy", "ro", "mi", "te", "lo", "nu",
];

fn vocabulary(cfg: &SynthConfig, rng: &mut SeededRng) -> Vocabulary {
    let mut seen = HashSet::new();
    let mut words = Vec::with_capacity(cfg.vocab_size);
    while words.len() < cfg.vocab_size {
        let len = rng.random_range(2..=4);
        let w: String = (0..len).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if seen.insert(w.clone()) {
            words.push(w);
        }
    }
    let common_n = (cfg.vocab_size as f64 * cfg.common_vocab_fraction) as usize;
    let common = words.split_off(words.len() - common_n);
    let per_topic = words.len() / cfg.topics;
    let topics = words.chunks(per_topic).take(cfg.topics).map(<[String]>::to_vec).collect();
    Vocabulary { topics, common }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

struct ProgramBuilder<'a> {
    cfg: &'a SynthConfig,
    rng: SeededRng,
    topics: Vec<usize>,
    by_topic: Vec<Vec<usize>>,
    /// (caller, offset) -> callees with labels
    sites: BTreeMap<(usize, u64), Vec<(usize, bool)>>,
    next_offset: Vec<u64>,
}

impl ProgramBuilder<'_> {
    fn new_site(&mut self, caller: usize) -> u64 {
        let o = self.next_offset[caller];
        self.next_offset[caller] += 1;
        o
    }

    /// A callee for `caller` drawn the way true calls are drawn.
    fn true_like_callee(&mut self, caller: usize, exclude: &[usize]) -> Option<usize> {
        let n = self.topics.len();
        let same_topic = !self.rng.random_bool(self.cfg.cross_topic_true_rate);
        let pool: Vec<usize> = if same_topic {
            self.by_topic[self.topics[caller]].clone()
        } else {
            (1..n).filter(|&v| self.topics[v] != self.topics[caller]).collect()
        };
        let pool: Vec<usize> = pool
            .into_iter()
            .filter(|v| *v != caller && *v != 0 && !exclude.contains(v))
            .collect();
        pool.choose(&mut self.rng).copied()
    }

    fn cross_topic_callee(&mut self, caller: usize, exclude: &[usize]) -> Option<usize> {
        let pool: Vec<usize> = (1..self.topics.len())
            .filter(|&v| self.topics[v] != self.topics[caller] && !exclude.contains(&v))
            .collect();
        pool.choose(&mut self.rng).copied()
    }

    fn build(mut self, vocab: &Vocabulary, program_id: &str) -> SynthProgram {
        let cfg = self.cfg;
        let n = self.topics.len();

        // backbone
        for v in 1..n {
            let earlier_same: Vec<usize> = (0..v).filter(|&u| self.topics[u] == self.topics[v]).collect();
            let caller = if !earlier_same.is_empty() && !self.rng.random_bool(cfg.cross_topic_true_rate) {
                *earlier_same.choose(&mut self.rng).unwrap()
            } else {
                self.rng.random_range(0..v)
            };
            let o = self.new_site(caller);
            self.sites.insert((caller, o), vec![(v, true)]);
        }

        // extra monomorphic true calls
        let extra = (cfg.true_edge_density * (n - 1) as f64).round() as usize;
        for _ in 0..extra {
            let caller = self.rng.random_range(0..n);
            if let Some(callee) = self.true_like_callee(caller, &[]) {
                let o = self.new_site(caller);
                self.sites.insert((caller, o), vec![(callee, true)]);
            }
        }

        // planted polymorphic sites, all targets true
        for caller in 0..n {
            if !self.rng.random_bool(cfg.polymorphic_site_rate) {
                continue;
            }
            let want = self.rng.random_range(cfg.polymorphic_fanout[0]..=cfg.polymorphic_fanout[1]);
            let mut pool: Vec<usize> = self.by_topic[self.topics[caller]]
                .iter()
                .copied()
                .filter(|&v| v != caller && v != 0)
                .collect();
            if pool.len() < 2 {
                continue;
            }
            pool.shuffle(&mut self.rng);
            pool.truncate(want);
            let o = self.new_site(caller);
            self.sites.insert((caller, o), pool.into_iter().map(|v| (v, true)).collect());
        }

        // false targets at existing sites
        let true_edges: usize = self.sites.values().map(Vec::len).sum();
        let false_edges = (cfg.false_edge_density * true_edges as f64).round() as usize;
        let site_keys: Vec<(usize, u64)> = self.sites.keys().copied().collect();
        let mut placed = 0;
        let mut attempts = 0;
        while placed < false_edges && attempts < 20 * false_edges + 100 {
            attempts += 1;
            let key = *site_keys.choose(&mut self.rng).unwrap();
            let existing: Vec<usize> = self.sites[&key].iter().map(|(v, _)| *v).collect();
            let callee = if self.rng.random_bool(cfg.semantic_signal) {
                self.cross_topic_callee(key.0, &existing)
            } else {
                self.true_like_callee(key.0, &existing)
            };
            if let Some(v) = callee {
                self.sites.get_mut(&key).unwrap().push((v, false));
                placed += 1;
            }
        }

        // names and sources
        let class_names: Vec<String> = vocab.topics.iter().map(|t| capitalize(&t[0])).collect();
        let mut sigs = Vec::with_capacity(n);
        let mut sources = SourceMap::new();
        for v in 0..n {
            let topic = &vocab.topics[self.topics[v]];
            let class = &class_names[self.topics[v]];
            let sig = if v == 0 {
                format!("{program_id}.{class}.main(java.lang.String[])")
            } else {
                let verb = topic.choose(&mut self.rng).unwrap();
                let noun = topic.choose(&mut self.rng).unwrap();
                format!("{program_id}.{class}.{verb}{}{v}()", capitalize(noun))
            };
            let len = self.rng.random_range(cfg.tokens_per_function[0]..=cfg.tokens_per_function[1]);
            let body: Vec<&str> = (0..len)
                .map(|_| {
                    let pool = if vocab.common.is_empty() || self.rng.random_bool(cfg.topic_token_share) {
                        topic
                    } else {
                        &vocab.common
                    };
                    pool.choose(&mut self.rng).unwrap().as_str()
                })
                .collect();
            let mut code = format!("{sig} {{\n");
            for pair in body.chunks(2) {
                match pair {
                    [a, b] => code.push_str(&format!("    {a}.get{}();\n", capitalize(b))),
                    [a] => code.push_str(&format!("    return {a};\n")),
                    _ => unreachable!(),
                }
            }
            code.push('}');
            sources.insert(sig.clone(), code);
            sigs.push(sig);
        }

        let mut b = CallGraph::builder(program_id);
        for sig in &sigs {
            b.add_node(sig).expect("non-empty signature");
        }
        for (&(caller, offset), targets) in &self.sites {
            let mut targets = targets.clone();
            targets.sort_unstable();
            for (callee, is_true) in targets {
                let label = if is_true {
                    Label::TruePositive
                } else {
                    Label::FalsePositive
                };
                let inserted = b
                    .add_edge(&sigs[caller], &sigs[callee], offset, label)
                    .expect("valid signatures");
                debug_assert!(inserted);
            }
        }
        SynthProgram {
            graph: b.build(),
            sources,
            topics: self.topics,
        }
    }
}

pub fn program_id(index: usize) -> String {
    format!("prog{index:03}")
}

pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthProgram>> {
    cfg.validate()?;
    let mut master = seeded_rng(cfg.seed);
    let vocab = vocabulary(cfg, &mut master);
    let seeds: Vec<u64> = (0..cfg.programs).map(|_| master.random()).collect();
    let programs = seeds
        .into_iter()
        .enumerate()
        .map(|(i, seed)| {
            let mut rng = seeded_rng(seed);
            let n = 1 + rng.random_range(cfg.nodes[0]..=cfg.nodes[1]);
            let topics: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.topics)).collect();
            let mut by_topic = vec![Vec::new(); cfg.topics];
            for (v, &t) in topics.iter().enumerate() {
                by_topic[t].push(v);
            }
            ProgramBuilder {
                cfg,
                rng,
                topics,
                by_topic,
                sites: BTreeMap::new(),
                next_offset: vec![0; n],
            }
            .build(&vocab, &program_id(i))
        })
        .collect();
    Ok(programs)
}

#[derive(Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub programs: Vec<String>,
}

/// Writes `<id>.cg.jsonl` and `<id>.src.jsonl` per program plus
/// `manifest.json`.
pub fn write_corpus(dir: impl AsRef<Path>, cfg: &SynthConfig, programs: &[SynthProgram]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in programs {
        let id = p.graph.program_id();
        save_callgraph(&p.graph, dir.join(format!("{id}.cg.jsonl")))?;
        save_sources(&p.sources, dir.join(format!("{id}.src.jsonl")))?;
    }
    let manifest = Manifest {
        config: cfg.clone(),
        programs: programs.iter().map(|p| p.graph.program_id().to_owned()).collect(),
    };
    let path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Program-level split: indices of training and test programs, each sorted.
pub fn split_indices(count: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} must be in (0, 1)")));
    }
    let n_train = (train_fraction * count as f64).round() as usize;
    if n_train == 0 || n_train >= count {
        return Err(Error::Config(format!(
            "{count} programs are too few to split at {train_fraction}"
        )));
    }
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut seeded_rng(seed));
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

pub fn split<T: Clone>(items: &[T], train_fraction: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    let (train, test) = split_indices(items.len(), train_fraction, seed)?;
    Ok((
        train.into_iter().map(|i| items[i].clone()).collect(),
        test.into_iter().map(|i| items[i].clone()).collect(),
    ))
}
