//! End-to-end helpers: featurize programs, train, predict, and the seeded
//! closed-loop experiment on a synthetic corpus.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::CallGraph;
use crate::graph::SourceMap;
use crate::model::{self, Ablation, Example, FusionConfig, FusionModel};
use crate::prune::{self, Calibration, MetricsRow, PruneReport, PruneRule};
use crate::semantic::{semantic_matrix, HashEncoder, SemProvider, SemVector, SourceMode, DEFAULT_HASH_DIM};
use crate::structural::{featurize_graph, StructVector};
use crate::synth::{self, SynthConfig, SynthProgram};

/// Per-edge inputs of one program, in edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramFeatures {
    pub structure: Vec<StructVector>,
    /// Empty vectors when no semantic provider was used.
    pub sem: Vec<SemVector>,
}

pub fn featurize(g: &CallGraph, sources: &SourceMap, provider: Option<&dyn SemProvider>) -> Result<ProgramFeatures> {
    let structure = featurize_graph(g);
    let sem = match provider {
        Some(p) => semantic_matrix(g, p, sources)?,
        None => vec![Vec::new(); g.edge_count()],
    };
    Ok(ProgramFeatures { structure, sem })
}

/// Training examples for every edge; unlabeled edges are an error.
pub fn labeled_examples(g: &CallGraph, features: &ProgramFeatures) -> Result<Vec<Example>> {
    g.edges()
        .iter()
        .zip(features.sem.iter().zip(&features.structure))
        .enumerate()
        .map(|(i, (e, (sem, structure)))| {
            let label = e.label.class().ok_or_else(|| {
                Error::Training(format!("edge {i} of {} has no label", g.program_id()))
            })?;
            Ok(Example {
                sem: sem.clone(),
                structure: *structure,
                label,
            })
        })
        .collect()
}

/// `prob_TP` for every edge.
pub fn predict(model: &FusionModel, features: &ProgramFeatures) -> Result<Vec<f64>> {
    features
        .sem
        .par_iter()
        .zip(&features.structure)
        .enumerate()
        .map(|(i, (sem, structure))| {
            model
                .classify_edge(sem, structure)
                .map(|(_, p)| p)
                .map_err(|e| Error::at_edge(i, e))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub synth: SynthConfig,
    pub train_fraction: f64,
    pub hash_dim: usize,
    pub source_mode: SourceMode,
    /// Training settings shared by all variants; `ablation` and `sem_dim`
    /// are overridden per variant.
    pub training: FusionConfig,
    /// Seeds averaged for the random-pruning baseline.
    pub random_trials: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            synth: SynthConfig::default(),
            train_fraction: 0.8,
            hash_dim: DEFAULT_HASH_DIM,
            source_mode: SourceMode::Both,
            training: desk_training(),
            random_trials: 20,
        }
    }
}

/// Training settings for corpora of a few thousand edges. The
/// transformer-scale defaults take too few steps to move a freshly
/// initialized model here.
pub fn desk_training() -> FusionConfig {
    FusionConfig {
        sem_dim: DEFAULT_HASH_DIM,
        lr: 1e-3,
        epochs: 30,
        ..FusionConfig::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariantOutcome {
    pub ablation: Ablation,
    /// Held-out metrics with the argmax rule.
    pub report: PruneReport,
    /// Balanced threshold fitted on the training programs.
    pub calibration: Calibration,
    /// Held-out metrics at the calibrated threshold.
    pub calibrated_report: PruneReport,
    /// Per held-out program, the percentage of edges the argmax rule removed.
    pub prune_percent: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub train_programs: Vec<String>,
    pub test_programs: Vec<String>,
    pub unpruned: PruneReport,
    pub variants: Vec<VariantOutcome>,
    /// Random pruning at the full model's per-program prune percentage,
    /// each program's metrics averaged over the trial seeds.
    pub random_baseline: PruneReport,
    pub monomorph_unpruned: PruneReport,
    pub monomorph_pruned: PruneReport,
}

impl ExperimentReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn variant(&self, ablation: Ablation) -> Option<&VariantOutcome> {
        self.variants.iter().find(|v| v.ablation == ablation)
    }
}

pub struct Experiment {
    pub programs: Vec<SynthProgram>,
    /// Models in the order full, sem-only, struct-only.
    pub models: Vec<FusionModel>,
    pub report: ExperimentReport,
}

fn truth_scores(graphs: &[&CallGraph], pruned: &[CallGraph]) -> Result<PruneReport> {
    let rows = graphs
        .iter()
        .zip(pruned)
        .map(|(g, p)| prune::score(p, &g.truth_keys()))
        .collect();
    prune::aggregate(rows)
}

fn mean_rows(program_id: &str, rows: &[MetricsRow]) -> MetricsRow {
    let n = rows.len() as f64;
    let avg = |f: fn(&MetricsRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    MetricsRow {
        program_id: program_id.to_owned(),
        precision: avg(|r| r.precision),
        recall: avg(|r| r.recall),
        f_measure: avg(|r| r.f_measure),
        selected: rows[0].selected,
        truth: rows[0].truth,
        hits: rows.iter().map(|r| r.hits).sum::<usize>() / rows.len(),
    }
}

/// Generates the corpus, splits it by program, trains the full and both
/// single-branch models, and evaluates them on the held-out programs.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    if cfg.random_trials == 0 {
        return Err(Error::Config("random_trials must be at least 1".into()));
    }
    let programs = synth::generate(&cfg.synth)?;
    let (train_idx, test_idx) = synth::split_indices(programs.len(), cfg.train_fraction, cfg.synth.seed)?;
    let encoder = HashEncoder::new(cfg.hash_dim, cfg.source_mode)?;
    let features: Vec<ProgramFeatures> = programs
        .iter()
        .map(|p| featurize(&p.graph, &p.sources, Some(&encoder)))
        .collect::<Result<_>>()?;

    let mut train_data = Vec::new();
    for &i in &train_idx {
        train_data.extend(labeled_examples(&programs[i].graph, &features[i])?);
    }
    let train_graphs: Vec<CallGraph> = train_idx.iter().map(|&i| programs[i].graph.clone()).collect();
    let test_graphs: Vec<&CallGraph> = test_idx.iter().map(|&i| &programs[i].graph).collect();
    let ids = |idx: &[usize]| idx.iter().map(|&i| programs[i].graph.program_id().to_owned()).collect();

    let unpruned = truth_scores(&test_graphs, &test_graphs.iter().map(|g| (*g).clone()).collect::<Vec<_>>())?;

    let mut models = Vec::new();
    let mut variants = Vec::new();
    let mut full_pruned = Vec::new();
    for ablation in [Ablation::Both, Ablation::SemOnly, Ablation::StructOnly] {
        let mcfg = FusionConfig {
            ablation,
            sem_dim: cfg.hash_dim,
            source_mode: cfg.source_mode,
            ..cfg.training.clone()
        };
        let data: Vec<Example> = if ablation.uses_sem() {
            train_data.clone()
        } else {
            train_data
                .iter()
                .map(|e| Example {
                    sem: Vec::new(),
                    ..e.clone()
                })
                .collect()
        };
        let model = model::train(&mcfg, &data)?;
        drop(data);

        let train_probs: Vec<Vec<f64>> = train_idx
            .iter()
            .map(|&i| predict(&model, &features[i]))
            .collect::<Result<_>>()?;
        let calibration = prune::calibrate_balanced(&train_graphs, &train_probs)?;

        let mut pruned = Vec::new();
        let mut calibrated = Vec::new();
        let mut prune_percent = Vec::new();
        for (&i, g) in test_idx.iter().zip(&test_graphs) {
            let probs = predict(&model, &features[i])?;
            let (p, _) = prune::prune_with_rule(g, &probs, PruneRule::Argmax)?;
            let removed = g.edge_count() - p.edge_count();
            prune_percent.push(100.0 * removed as f64 / g.edge_count().max(1) as f64);
            pruned.push(p);
            calibrated.push(prune::prune_threshold(g, &probs, calibration.tau)?);
        }
        variants.push(VariantOutcome {
            ablation,
            report: truth_scores(&test_graphs, &pruned)?,
            calibration,
            calibrated_report: truth_scores(&test_graphs, &calibrated)?,
            prune_percent,
        });
        if ablation == Ablation::Both {
            full_pruned = pruned;
        }
        models.push(model);
    }

    let full_percent = &variants[0].prune_percent;
    let mut random_rows = Vec::new();
    for (g, &percent) in test_graphs.iter().zip(full_percent) {
        let truth = g.truth_keys();
        let rows: Vec<MetricsRow> = (0..cfg.random_trials)
            .map(|seed| Ok(prune::score(&prune::random_prune(g, percent, seed)?, &truth)))
            .collect::<Result<_>>()?;
        random_rows.push(mean_rows(g.program_id(), &rows));
    }

    let truth_graphs: Vec<CallGraph> = test_graphs.iter().map(|g| g.ground_truth()).collect();
    let mono = |preds: &[&CallGraph]| {
        prune::aggregate(
            preds
                .iter()
                .zip(&truth_graphs)
                .map(|(p, t)| prune::monomorph_score(p, t))
                .collect(),
        )
    };
    let monomorph_unpruned = mono(&test_graphs)?;
    let monomorph_pruned = mono(&full_pruned.iter().collect::<Vec<_>>())?;

    let report = ExperimentReport {
        train_programs: ids(&train_idx),
        test_programs: ids(&test_idx),
        unpruned,
        variants,
        random_baseline: prune::aggregate(random_rows)?,
        monomorph_unpruned,
        monomorph_pruned,
    };
    Ok(Experiment {
        programs,
        models,
        report,
    })
}
