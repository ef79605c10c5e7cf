use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cgprune::graph::{load_callgraph, load_sources, program_id_from_path, save_callgraph, CallGraph, SourceMap};
use cgprune::model::{self, FusionConfig, FusionModel};
use cgprune::pipeline::{featurize, labeled_examples, predict, ProgramFeatures};
use cgprune::prune::{self, PruneRule};
use cgprune::semantic::{
    load_embeddings, write_embeddings, EmbeddingFileProvider, EmbeddingStore, HashEncoder, SemProvider, SourceMode,
};
use cgprune::structural::write_feature_dump;
use cgprune::synth::{self, SynthConfig};
use cgprune::{Error, Result};
use log::{info, warn};
use serde::Deserialize;

use crate::{
    CalibrateArgs, Cli, Command, FeaturizeArgs, PairArgs, Provider, PruneArgs, SynthArgs, TrainArgs,
};

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    train: Option<FusionConfig>,
    synth: Option<SynthConfig>,
}

fn read_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn run(cli: &Cli) -> Result<()> {
    let config = read_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Featurize(a) => cmd_featurize(a),
        Command::Train(a) => cmd_train(a, config.train.unwrap_or_default(), cli.seed),
        Command::Prune(a) => cmd_prune(a, cli.seed.unwrap_or(0)),
        Command::Calibrate(a) => cmd_calibrate(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Monomorph(a) => cmd_monomorph(a),
        Command::Synth(a) => cmd_synth(a, config.synth.unwrap_or_default(), cli.seed),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_owned(),
            source: e,
        })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_owned(),
        source: e,
    }
}

/// `dir/<id>.cg.jsonl` -> `dir/<id>.<ext>`
fn sibling(graph_path: &Path, ext: &str) -> PathBuf {
    let id = program_id_from_path(graph_path);
    graph_path.with_file_name(format!("{id}.{ext}"))
}

fn read_list(path: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let entries: Vec<PathBuf> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect();
    if entries.is_empty() {
        return Err(Error::Config(format!("{} lists no graphs", path.display())));
    }
    Ok(entries)
}

fn sources_for(graph_path: &Path, explicit: Option<&Path>) -> Result<Option<SourceMap>> {
    match explicit {
        Some(p) => load_sources(p).map(Some),
        None => {
            let p = sibling(graph_path, "src.jsonl");
            if p.exists() {
                load_sources(p).map(Some)
            } else {
                Ok(None)
            }
        }
    }
}

/// Semantic inputs of one program for a given provider choice.
enum Semantics {
    None,
    Hash(HashEncoder, SourceMap),
    File(EmbeddingFileProvider),
}

impl Semantics {
    fn load(
        provider: Provider,
        graph_path: &Path,
        g: &CallGraph,
        src: Option<&Path>,
        emb: Option<&Path>,
        hash: (usize, SourceMode),
    ) -> Result<Semantics> {
        match provider {
            Provider::Hash => {
                let encoder = HashEncoder::new(hash.0, hash.1)?;
                let sources = sources_for(graph_path, src)?.unwrap_or_else(|| {
                    warn!(
                        "{}: no source map; semantic vectors will be zero",
                        g.program_id()
                    );
                    SourceMap::new()
                });
                Ok(Semantics::Hash(encoder, sources))
            }
            Provider::Emb => {
                let path = emb.map_or_else(|| sibling(graph_path, "emb"), Path::to_owned);
                let store = load_embeddings(&path, g.edge_count())?;
                Ok(Semantics::File(EmbeddingFileProvider::new(store)))
            }
        }
    }

    fn featurize(&self, g: &CallGraph) -> Result<ProgramFeatures> {
        match self {
            Semantics::None => featurize(g, &SourceMap::new(), None),
            Semantics::Hash(enc, src) => featurize(g, src, Some(enc as &dyn SemProvider)),
            Semantics::File(p) => featurize(g, &SourceMap::new(), Some(p as &dyn SemProvider)),
        }
    }

    fn dimension(&self) -> Option<usize> {
        match self {
            Semantics::None => None,
            Semantics::Hash(enc, _) => Some(enc.dimension()),
            Semantics::File(p) => Some(p.dimension()),
        }
    }
}

fn semantics_for_model(
    m: &FusionModel,
    provider: Provider,
    graph_path: &Path,
    g: &CallGraph,
    src: Option<&Path>,
    emb: Option<&Path>,
) -> Result<Semantics> {
    if !m.config.ablation.uses_sem() {
        return Ok(Semantics::None);
    }
    let sem = Semantics::load(provider, graph_path, g, src, emb, (m.config.sem_dim, m.config.source_mode))?;
    if let Some(d) = sem.dimension().filter(|&d| d != m.config.sem_dim) {
        return Err(Error::Shape {
            expected: m.config.sem_dim,
            got: d,
            context: "semantic vector length for this model",
        });
    }
    Ok(sem)
}

fn cmd_featurize(a: &FeaturizeArgs) -> Result<()> {
    let g = load_callgraph(&a.graph)?;
    let sem = Semantics::load(
        a.sem.provider,
        &a.graph,
        &g,
        a.src.as_deref(),
        a.emb.as_deref(),
        (a.sem.hash_dim, a.sem.source_mode.into()),
    )?;
    let features = sem.featurize(&g)?;
    fs::create_dir_all(&a.out_dir).map_err(io_at(&a.out_dir))?;
    let id = g.program_id();
    let feat_path = a.out_dir.join(format!("{id}.feat.jsonl"));
    let mut out = create(&feat_path)?;
    write_feature_dump(&features.structure, &mut out)
        .and_then(|()| out.flush())
        .map_err(io_at(&feat_path))?;
    info!("wrote {} feature rows to {}", features.structure.len(), feat_path.display());
    if let Semantics::Hash(enc, _) = &sem {
        let store = EmbeddingStore::from_rows(enc.dimension(), &features.sem)?;
        let emb_path = a.out_dir.join(format!("{id}.emb"));
        write_embeddings(&store, &emb_path)?;
        info!("wrote {} semantic rows to {}", store.count(), emb_path.display());
    }
    Ok(())
}

fn train_config(a: &TrainArgs, mut cfg: FusionConfig, seed: Option<u64>) -> FusionConfig {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(ab) = a.ablation {
        cfg.ablation = ab.into();
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    if let Some(v) = a.hidden {
        cfg.hidden = v;
    }
    cfg.source_mode = a.sem.source_mode.into();
    if a.sem.provider == Provider::Hash {
        cfg.sem_dim = a.sem.hash_dim;
    }
    cfg
}

fn load_labeled(
    list: &Path,
    provider: Provider,
    uses_sem: bool,
    hash: (usize, SourceMode),
) -> Result<Vec<(CallGraph, Semantics)>> {
    read_list(list)?
        .into_iter()
        .map(|path| {
            let g = load_callgraph(&path)?;
            if !g.is_fully_labeled() {
                return Err(Error::Config(format!("{} has unlabeled edges", path.display())));
            }
            let sem = if uses_sem {
                Semantics::load(provider, &path, &g, None, None, hash)?
            } else {
                Semantics::None
            };
            Ok((g, sem))
        })
        .collect()
}

fn cmd_train(a: &TrainArgs, base: FusionConfig, seed: Option<u64>) -> Result<()> {
    let mut cfg = train_config(a, base, seed);
    let uses_sem = cfg.ablation.uses_sem();
    let corpus = load_labeled(&a.train_list, a.sem.provider, uses_sem, (a.sem.hash_dim, cfg.source_mode))?;
    if uses_sem && a.sem.provider == Provider::Emb {
        let dims: Vec<usize> = corpus.iter().filter_map(|(_, s)| s.dimension()).collect();
        cfg.sem_dim = dims[0];
        if let Some(&d) = dims.iter().find(|&&d| d != cfg.sem_dim) {
            return Err(Error::Shape {
                expected: cfg.sem_dim,
                got: d,
                context: "embedding dimension across training programs",
            });
        }
    }
    let mut data = Vec::new();
    for (g, sem) in &corpus {
        data.extend(labeled_examples(g, &sem.featurize(g)?)?);
    }
    info!(
        "training {:?} model on {} edges from {} programs",
        cfg.ablation,
        data.len(),
        corpus.len()
    );
    let model = model::train_with(&cfg, &data, |epoch, loss| info!("epoch {}: mean loss {loss:.6}", epoch + 1))?;
    model.save(&a.out)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn cmd_prune(a: &PruneArgs, seed: u64) -> Result<()> {
    let g = load_callgraph(&a.graph)?;
    let pruned = if let Some(percent) = a.random_percent {
        prune::random_prune(&g, percent, seed)?
    } else {
        let model_path = a.model.as_ref().expect("clap requires --model without --random-percent");
        let m = FusionModel::load(model_path)?;
        let rule = match a.threshold {
            Some(tau) if !(0.0..=1.0).contains(&tau) => {
                return Err(Error::Config(format!("threshold {tau} outside [0, 1]")));
            }
            Some(tau) => PruneRule::Threshold(tau),
            None => PruneRule::Argmax,
        };
        let sem = semantics_for_model(&m, a.provider, &a.graph, &g, a.src.as_deref(), a.emb.as_deref())?;
        let probs = predict(&m, &sem.featurize(&g)?)?;
        let (pruned, decisions) = prune::prune_with_rule(&g, &probs, rule)?;
        if let Some(path) = &a.decisions {
            let mut out = create(path)?;
            for d in &decisions {
                serde_json::to_writer(&mut out, d).map_err(|e| Error::Format(e.to_string()))?;
                out.write_all(b"\n").map_err(io_at(path))?;
            }
            out.flush().map_err(io_at(path))?;
        }
        pruned
    };
    save_callgraph(&pruned, &a.out)?;
    info!(
        "{}: kept {} of {} edges, wrote {}",
        g.program_id(),
        pruned.edge_count(),
        g.edge_count(),
        a.out.display()
    );
    Ok(())
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let m = FusionModel::load(&a.model)?;
    let uses_sem = m.config.ablation.uses_sem();
    let corpus = load_labeled(&a.train_list, a.provider, uses_sem, (m.config.sem_dim, m.config.source_mode))?;
    let mut graphs = Vec::new();
    let mut probs = Vec::new();
    for (g, sem) in corpus {
        if let Some(d) = sem.dimension().filter(|&d| d != m.config.sem_dim) {
            return Err(Error::Shape {
                expected: m.config.sem_dim,
                got: d,
                context: "semantic vector length for this model",
            });
        }
        probs.push(predict(&m, &sem.featurize(&g)?)?);
        graphs.push(g);
    }
    let c = prune::calibrate_balanced(&graphs, &probs)?;
    info!(
        "balanced threshold {} (mean precision {:.4}, mean recall {:.4})",
        c.tau, c.mean_precision, c.mean_recall
    );
    let mut text = serde_json::to_string_pretty(&c).expect("calibration serializes");
    text.push('\n');
    write_text(&a.out, &text)
}

fn load_pairs(a: &PairArgs) -> Result<Vec<(CallGraph, CallGraph)>> {
    if a.pred.len() != a.truth.len() {
        return Err(Error::Config(format!(
            "{} --pred but {} --truth graphs",
            a.pred.len(),
            a.truth.len()
        )));
    }
    a.pred
        .iter()
        .zip(&a.truth)
        .map(|(p, t)| Ok((load_callgraph(p)?, load_callgraph(t)?)))
        .collect()
}

fn write_report(path: &Path, report: &prune::PruneReport) -> Result<()> {
    let m = report.aggregate.mean;
    info!(
        "mean precision {:.4}, recall {:.4}, F {:.4} over {} programs",
        m.precision,
        m.recall,
        m.f_measure,
        report.per_program.len()
    );
    write_text(path, &report.to_json())
}

fn cmd_eval(a: &PairArgs) -> Result<()> {
    let rows = load_pairs(a)?
        .into_iter()
        .map(|(pred, truth)| {
            let mut row = prune::score(&pred, &truth.truth_keys());
            row.program_id = truth.program_id().to_owned();
            row
        })
        .collect();
    write_report(&a.out, &prune::aggregate(rows)?)
}

fn cmd_monomorph(a: &PairArgs) -> Result<()> {
    let rows = load_pairs(a)?
        .into_iter()
        .map(|(pred, truth)| {
            let mut row = prune::monomorph_score(&pred, &truth.ground_truth());
            row.program_id = truth.program_id().to_owned();
            row
        })
        .collect();
    write_report(&a.out, &prune::aggregate(rows)?)
}

fn cmd_synth(a: &SynthArgs, mut cfg: SynthConfig, seed: Option<u64>) -> Result<()> {
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = a.programs {
        cfg.programs = n;
    }
    if let Some(s) = a.signal {
        cfg.semantic_signal = s;
    }
    let programs = synth::generate(&cfg)?;
    synth::write_corpus(&a.out_dir, &cfg, &programs)?;
    let (train, test) = synth::split_indices(programs.len(), a.train_fraction, cfg.seed)?;
    for (name, idx) in [("train.list", &train), ("test.list", &test)] {
        let text: String = idx
            .iter()
            .map(|&i| format!("{}.cg.jsonl\n", programs[i].graph.program_id()))
            .collect();
        write_text(&a.out_dir.join(name), &text)?;
    }
    let edges: usize = programs.iter().map(|p| p.graph.edge_count()).sum();
    info!(
        "wrote {} programs ({edges} edges; {} train, {} test) to {}",
        programs.len(),
        train.len(),
        test.len(),
        a.out_dir.display()
    );
    Ok(())
}

