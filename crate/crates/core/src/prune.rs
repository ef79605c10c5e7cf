//! Pruning rules and evaluation.
//!
//! Pruning never touches the node set: `V' = V` and `E'` is the subsequence of
//! `E` that the rule keeps, in original order.
//!
//! Metric conventions: precision is 0 when nothing is selected, recall is 0
//! when the truth set is empty, and F is 0 when `P + R = 0`. Aggregates are
//! unweighted means over programs with population standard deviations.

use std::collections::{BTreeSet, HashSet};
use std::hash::Hash;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{CallGraph, Edge, EdgeKey, FunctionSig, Label};
use crate::nn::seeded_rng;

/// Calibration grid resolution: thresholds are `i / GRID_STEPS`.
pub const GRID_STEPS: u32 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PruneDecision {
    pub ordinal: usize,
    pub prob_tp: f64,
    pub kept: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneRule {
    /// Keep iff `prob_TP > prob_FP`, i.e. `prob_TP > 0.5`.
    Argmax,
    /// Keep iff `prob_TP >= tau`.
    Threshold(f64),
}

impl PruneRule {
    pub fn keeps(self, prob_tp: f64) -> bool {
        match self {
            PruneRule::Argmax => prob_tp > 1.0 - prob_tp,
            PruneRule::Threshold(tau) => prob_tp >= tau,
        }
    }
}

/// Removes every edge the classifier labels false positive. A classifier
/// error aborts with the edge ordinal attached.
pub fn prune<F>(g: &CallGraph, mut classify: F) -> Result<CallGraph>
where
    F: FnMut(usize, &Edge) -> Result<Label>,
{
    let mut keep = Vec::with_capacity(g.edge_count());
    for (i, e) in g.edges().iter().enumerate() {
        let label = classify(i, e).map_err(|err| Error::at_edge(i, err))?;
        keep.push(label != Label::FalsePositive);
    }
    Ok(g.retain_edges(|i, _| keep[i]))
}

fn check_probs(g: &CallGraph, probs: &[f64]) -> Result<()> {
    if probs.len() != g.edge_count() {
        return Err(Error::Alignment(format!(
            "{} probabilities for {} edges of {}",
            probs.len(),
            g.edge_count(),
            g.program_id()
        )));
    }
    Ok(())
}

pub fn prune_with_rule(g: &CallGraph, probs: &[f64], rule: PruneRule) -> Result<(CallGraph, Vec<PruneDecision>)> {
    check_probs(g, probs)?;
    let decisions: Vec<PruneDecision> = probs
        .iter()
        .enumerate()
        .map(|(ordinal, &prob_tp)| PruneDecision {
            ordinal,
            prob_tp,
            kept: rule.keeps(prob_tp),
        })
        .collect();
    let pruned = g.retain_edges(|i, _| decisions[i].kept);
    Ok((pruned, decisions))
}

pub fn prune_threshold(g: &CallGraph, probs: &[f64], tau: f64) -> Result<CallGraph> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(format!("threshold {tau} outside [0, 1]")));
    }
    Ok(prune_with_rule(g, probs, PruneRule::Threshold(tau))?.0)
}

/// Removes `round(percent / 100 * |E|)` edges chosen uniformly at random.
pub fn random_prune(g: &CallGraph, percent: f64, seed: u64) -> Result<CallGraph> {
    if !(0.0..=100.0).contains(&percent) {
        return Err(Error::Config(format!("prune percentage {percent} outside [0, 100]")));
    }
    let n = g.edge_count();
    let remove = ((percent / 100.0) * n as f64).round() as usize;
    let mut rng = seeded_rng(seed);
    let mut drop = vec![false; n];
    for i in sample(&mut rng, n, remove.min(n)) {
        drop[i] = true;
    }
    Ok(g.retain_edges(|i, _| !drop[i]))
}

pub fn f_measure(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub program_id: String,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    /// |S|
    pub selected: usize,
    /// |G|
    pub truth: usize,
    /// |S ∩ G|
    pub hits: usize,
}

impl MetricsRow {
    pub fn from_counts(program_id: impl Into<String>, selected: usize, truth: usize, hits: usize) -> Self {
        let precision = if selected == 0 {
            0.0
        } else {
            hits as f64 / selected as f64
        };
        let recall = if truth == 0 { 0.0 } else { hits as f64 / truth as f64 };
        MetricsRow {
            program_id: program_id.into(),
            precision,
            recall,
            f_measure: f_measure(precision, recall),
            selected,
            truth,
            hits,
        }
    }
}

pub fn score_sets<T: Eq + Hash>(program_id: &str, selected: &HashSet<T>, truth: &HashSet<T>) -> MetricsRow {
    let hits = selected.iter().filter(|k| truth.contains(*k)).count();
    MetricsRow::from_counts(program_id, selected.len(), truth.len(), hits)
}

/// Edge-level P/R/F of a (pruned) graph against a truth edge set.
pub fn score(pred: &CallGraph, truth: &HashSet<EdgeKey>) -> MetricsRow {
    score_sets(pred.program_id(), &pred.edge_keys(), truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: MetricTriple,
    /// Population standard deviation.
    pub std: MetricTriple,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneReport {
    pub per_program: Vec<MetricsRow>,
    pub aggregate: Aggregate,
}

impl PruneReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate(rows: Vec<MetricsRow>) -> Result<PruneReport> {
    if rows.is_empty() {
        return Err(Error::Config("cannot aggregate zero programs".into()));
    }
    let (pm, ps) = mean_std(rows.iter().map(|r| r.precision));
    let (rm, rs) = mean_std(rows.iter().map(|r| r.recall));
    let (fm, fs) = mean_std(rows.iter().map(|r| r.f_measure));
    Ok(PruneReport {
        per_program: rows,
        aggregate: Aggregate {
            mean: MetricTriple {
                precision: pm,
                recall: rm,
                f_measure: fm,
            },
            std: MetricTriple {
                precision: ps,
                recall: rs,
                f_measure: fs,
            },
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub tau: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

pub fn threshold_grid() -> impl Iterator<Item = f64> {
    (0..=GRID_STEPS).map(|i| f64::from(i) / f64::from(GRID_STEPS))
}

/// Mean per-program precision and recall of threshold pruning at `tau`,
/// with truth taken from the edge labels.
pub fn mean_pr_at(graphs: &[CallGraph], probs: &[Vec<f64>], tau: f64) -> Result<(f64, f64)> {
    let mut sum_p = 0.0;
    let mut sum_r = 0.0;
    for (g, p) in graphs.iter().zip(probs) {
        check_probs(g, p)?;
        let (mut selected, mut truth, mut hits) = (0, 0, 0);
        for (e, &prob) in g.edges().iter().zip(p) {
            let kept = prob >= tau;
            let is_true = e.label == Label::TruePositive;
            selected += usize::from(kept);
            truth += usize::from(is_true);
            hits += usize::from(kept && is_true);
        }
        let row = MetricsRow::from_counts(g.program_id(), selected, truth, hits);
        sum_p += row.precision;
        sum_r += row.recall;
    }
    let n = graphs.len() as f64;
    Ok((sum_p / n, sum_r / n))
}

/// Whether every program with edges keeps at least one of them at `tau`.
/// Thresholds that empty a program would score it P = R = 0 and look
/// perfectly balanced.
pub fn keeps_every_program(probs: &[Vec<f64>], tau: f64) -> bool {
    probs.iter().all(|p| p.is_empty() || p.iter().any(|&x| x >= tau))
}

/// The grid threshold where mean precision and mean recall are closest,
/// among thresholds that leave every program non-empty; ties go to the
/// smallest threshold.
pub fn calibrate_balanced(graphs: &[CallGraph], probs: &[Vec<f64>]) -> Result<Calibration> {
    if graphs.is_empty() {
        return Err(Error::Config("calibration needs at least one program".into()));
    }
    if graphs.len() != probs.len() {
        return Err(Error::Alignment(format!(
            "{} probability lists for {} programs",
            probs.len(),
            graphs.len()
        )));
    }
    if let Some(g) = graphs.iter().find(|g| !g.is_fully_labeled()) {
        return Err(Error::Config(format!("{} has unlabeled edges", g.program_id())));
    }
    let mut best: Option<(f64, Calibration)> = None;
    for tau in threshold_grid().filter(|&t| keeps_every_program(probs, t)) {
        let (p, r) = mean_pr_at(graphs, probs, tau)?;
        let gap = (p - r).abs();
        if best.is_none_or(|(g, _)| gap < g) {
            best = Some((
                gap,
                Calibration {
                    tau,
                    mean_precision: p,
                    mean_recall: r,
                },
            ));
        }
    }
    Ok(best.expect("grid is non-empty").1)
}

pub type CallSite = (FunctionSig, u64);

/// Call sites with exactly one distinct callee.
pub fn monomorphic_sites(g: &CallGraph) -> BTreeSet<CallSite> {
    let mut targets: std::collections::BTreeMap<(usize, u64), BTreeSet<usize>> = Default::default();
    for e in g.edges() {
        targets.entry((e.caller, e.offset)).or_default().insert(e.callee);
    }
    targets
        .into_iter()
        .filter(|(_, callees)| callees.len() == 1)
        .map(|((caller, offset), _)| (g.sig(caller).clone(), offset))
        .collect()
}

/// P/R/F of the monomorphic sites found on `pred` against those found on
/// `truth`.
pub fn monomorph_score(pred: &CallGraph, truth: &CallGraph) -> MetricsRow {
    let found: HashSet<CallSite> = monomorphic_sites(pred).into_iter().collect();
    let expected: HashSet<CallSite> = monomorphic_sites(truth).into_iter().collect();
    score_sets(pred.program_id(), &found, &expected)
}
