//! `cgprune`: featurize, train, prune, calibrate and evaluate call graphs.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage or configuration,
//! 3 format or alignment, 4 numeric abort.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use cgprune::model::Ablation;
use cgprune::semantic::{SourceMode, DEFAULT_HASH_DIM};
use cgprune::Error;
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cgprune", version, about = "Prune false-positive edges from static call graphs")]
pub struct Cli {
    /// Seed for training, corpus generation and random pruning
    /// (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML file with optional [train] and [synth] tables.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Only report errors.
    #[arg(long, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write structural features (and hashed semantic vectors) per edge.
    Featurize(FeaturizeArgs),
    /// Train a classifier on the graphs named in a list file.
    Train(TrainArgs),
    /// Remove edges predicted to be false positives.
    Prune(PruneArgs),
    /// Find the balanced-point threshold on training graphs.
    Calibrate(CalibrateArgs),
    /// Score pruned graphs against labeled graphs.
    Eval(PairArgs),
    /// Score monomorphic call sites of pruned graphs against labeled graphs.
    Monomorph(PairArgs),
    /// Generate a synthetic labeled corpus.
    Synth(SynthArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provider {
    /// Token hashing over the source map.
    Hash,
    /// Precomputed `.emb` embedding files.
    Emb,
}

#[derive(Args, Debug, Clone)]
pub struct SemArgs {
    /// Where semantic vectors come from.
    #[arg(long, value_enum, default_value_t = Provider::Hash)]
    pub provider: Provider,

    /// Length of hashed semantic vectors (even).
    #[arg(long, default_value_t = DEFAULT_HASH_DIM, value_name = "N")]
    pub hash_dim: usize,

    /// Which side's source the hash provider reads.
    #[arg(long, value_enum, default_value_t = SourceModeArg::Both)]
    pub source_mode: SourceModeArg,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SourceModeArg {
    Both,
    CallerOnly,
    CalleeOnly,
}

impl From<SourceModeArg> for SourceMode {
    fn from(m: SourceModeArg) -> Self {
        match m {
            SourceModeArg::Both => SourceMode::Both,
            SourceModeArg::CallerOnly => SourceMode::CallerOnly,
            SourceModeArg::CalleeOnly => SourceMode::CalleeOnly,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationArg {
    Both,
    SemOnly,
    StructOnly,
}

impl From<AblationArg> for Ablation {
    fn from(a: AblationArg) -> Self {
        match a {
            AblationArg::Both => Ablation::Both,
            AblationArg::SemOnly => Ablation::SemOnly,
            AblationArg::StructOnly => Ablation::StructOnly,
        }
    }
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    /// Call graph (`*.cg.jsonl`).
    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,

    /// Source map (`*.src.jsonl`); without it hashed halves are zero.
    #[arg(long, value_name = "PATH")]
    pub src: Option<PathBuf>,

    /// Embedding file to validate against the graph (emb provider).
    #[arg(long, value_name = "PATH")]
    pub emb: Option<PathBuf>,

    #[command(flatten)]
    pub sem: SemArgs,

    /// Directory for `<id>.feat.jsonl` and, with the hash provider, `<id>.emb`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Text file naming one `*.cg.jsonl` per line, relative to the list.
    /// Sources and embeddings are read from `<id>.src.jsonl` / `<id>.emb`
    /// next to each graph.
    #[arg(long, value_name = "PATH")]
    pub train_list: PathBuf,

    /// Model file to write (`*.apm.json`).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    #[arg(long, value_enum)]
    pub ablation: Option<AblationArg>,

    #[command(flatten)]
    pub sem: SemArgs,

    #[arg(long)]
    pub lr: Option<f64>,

    #[arg(long)]
    pub epochs: Option<usize>,

    #[arg(long)]
    pub batch: Option<usize>,

    /// Projection width.
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Args, Debug)]
#[command(group(ArgGroup::new("rule").args(["argmax", "threshold", "random_percent"])))]
pub struct PruneArgs {
    /// Model file; not needed with --random-percent.
    #[arg(long, value_name = "PATH", required_unless_present = "random_percent")]
    pub model: Option<PathBuf>,

    #[arg(long, value_name = "PATH")]
    pub graph: PathBuf,

    /// Source map for the hash provider; defaults to `<id>.src.jsonl`
    /// next to the graph when present.
    #[arg(long, value_name = "PATH")]
    pub src: Option<PathBuf>,

    /// Embedding file for the emb provider; defaults to `<id>.emb` next
    /// to the graph.
    #[arg(long, value_name = "PATH")]
    pub emb: Option<PathBuf>,

    /// Where semantic vectors come from; the hash provider takes its
    /// length and source mode from the model.
    #[arg(long, value_enum, default_value_t = Provider::Hash)]
    pub provider: Provider,

    /// Keep an edge iff prob_TP > prob_FP (default rule).
    #[arg(long)]
    pub argmax: bool,

    /// Keep an edge iff prob_TP >= TAU.
    #[arg(long, value_name = "TAU")]
    pub threshold: Option<f64>,

    /// Baseline: remove this percentage of edges uniformly at random.
    #[arg(long, value_name = "N")]
    pub random_percent: Option<f64>,

    /// Pruned graph (`*.cg.jsonl`).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,

    /// Per-edge decisions as JSON lines.
    #[arg(long, value_name = "PATH")]
    pub decisions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    #[arg(long, value_name = "PATH")]
    pub model: PathBuf,

    /// Labeled training graphs, in the same list format as `train`.
    #[arg(long, value_name = "PATH")]
    pub train_list: PathBuf,

    /// Where semantic vectors come from; the hash provider takes its
    /// length and source mode from the model.
    #[arg(long, value_enum, default_value_t = Provider::Hash)]
    pub provider: Provider,

    /// Calibration result (JSON).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PairArgs {
    /// Pruned graph; repeat once per program.
    #[arg(long, value_name = "PATH", required = true)]
    pub pred: Vec<PathBuf>,

    /// Labeled graph for the matching --pred; repeat in the same order.
    #[arg(long, value_name = "PATH", required = true)]
    pub truth: Vec<PathBuf>,

    /// Metrics report (JSON).
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory for the corpus, `manifest.json`, `train.list`
    /// and `test.list`.
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,

    #[arg(long)]
    pub programs: Option<usize>,

    /// Semantic-signal strength in [0, 1].
    #[arg(long)]
    pub signal: Option<f64>,

    /// Fraction of programs listed in `train.list`.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

fn exit_code(err: &Error) -> u8 {
    match err.root() {
        Error::Parse { .. }
        | Error::DuplicateEdge { .. }
        | Error::Format(_)
        | Error::Alignment(_)
        | Error::Length { .. }
        | Error::Shape { .. }
        | Error::Index { .. } => 3,
        Error::Numeric(_) => 4,
        Error::Config(_) => 2,
        _ => 1,
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var("CGPRUNE_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("CGPRUNE_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    match init_threads().and_then(|()| commands::run(&cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
