use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relcull::analysis::{Aggregation, EvalMode};

const K_HELP: &str = "Comma-separated recall cut-offs";

#[derive(Debug, Parser)]
#[command(
    name = "relcull",
    version,
    about = "Find and prune visually-irrelevant predicates in scene-graph datasets",
    propagate_version = true
)]
pub struct Cli {
    /// Seed for every randomized stage (splits, initialization, shuffling, synthesis)
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// TOML config file; flags override it, it overrides built-in defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Directory for all outputs, including manifest.json
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out_dir: PathBuf,

    /// error, warn, info, debug or trace
    #[arg(long, global = true, default_value = "info")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert Visual-Genome-style JSON into the canonical dataset format
    Ingest(IngestArgs),
    /// Dataset statistics
    Stats(DatasetArg),
    /// Cluster predicate labels by phrase-vector distance and merge them
    Cluster(ClusterArgs),
    /// Train the discriminator on a split of a dataset
    TrainVdnet(TrainArgs),
    /// Evaluate a discriminator checkpoint: accuracy and recall
    EvalVdnet(EvalVdnetArgs),
    /// Full pipeline: select, cluster, split, train, evaluate, filter
    Curate(CurateArgs),
    /// Fit the frequency baseline on a train set and score a test set
    Baseline(BaselineArgs),
    /// Recall@K of a prediction file against a dataset
    Eval(EvalArgs),
    /// Label distributions and the predictability curve
    Report(ReportArgs),
    /// Generate a synthetic dataset with known predictable predicates
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, value_name = "FILE")]
    pub objects: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub relationships: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub attributes: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub image_meta: PathBuf,
}

#[derive(Debug, Args)]
pub struct DatasetArg {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClusterFlags {
    #[arg(long)]
    pub cluster_threshold: Option<f64>,
    /// single, complete or average
    #[arg(long)]
    pub linkage: Option<relcull::labelspace::Linkage>,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[command(flatten)]
    pub cluster: ClusterFlags,
}

#[derive(Debug, Args)]
pub struct VdnetFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    /// Share of images used for training; the rest is held out
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[command(flatten)]
    pub vdnet: VdnetFlags,
}

#[derive(Debug, Args)]
pub struct RecallFlags {
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long, value_delimiter = ',', help = K_HELP)]
    pub k: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub aggregation: Option<AggregationArg>,
}

#[derive(Debug, Args)]
pub struct EvalVdnetArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub recall: RecallFlags,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub embeddings: PathBuf,
    /// Predicates with held-out accuracy above this are dropped
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub n_objects: Option<usize>,
    #[arg(long)]
    pub n_predicates: Option<usize>,
    /// Held-out samples a predicate needs before it can be dropped
    #[arg(long)]
    pub min_support: Option<usize>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    #[command(flatten)]
    pub cluster: ClusterFlags,
    #[command(flatten)]
    pub vdnet: VdnetFlags,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub test: PathBuf,
    /// Add-k smoothing of the pair counts
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[command(flatten)]
    pub recall: RecallFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub dataset: PathBuf,
    /// JSONL lines {"image_id", "subject_id", "object_id", "scores"}
    #[arg(long, value_name = "FILE")]
    pub predictions: PathBuf,
    #[command(flatten)]
    pub recall: RecallFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    /// Predicate label histogram of a dataset
    Dist,
    /// Predicate histogram for one subject/object class pair
    Cond,
    /// Fraction of predicates at or above each accuracy threshold
    Curve,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_enum)]
    pub which: Which,
    /// Dataset for dist and cond
    #[arg(long, value_name = "FILE")]
    pub dataset: Option<PathBuf>,
    /// Curation report for curve
    #[arg(long, value_name = "FILE")]
    pub report: Option<PathBuf>,
    /// Subject class label for cond
    #[arg(long)]
    pub subject: Option<String>,
    /// Object class label for cond
    #[arg(long)]
    pub object: Option<String>,
    /// Number of thresholds for curve
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n_images: Option<usize>,
    #[arg(long)]
    pub instances_per_image: Option<usize>,
    #[arg(long)]
    pub n_classes: Option<usize>,
    /// Dimension of the generated label vectors
    #[arg(long)]
    pub embed_dim: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Preddet,
    Predcls,
}

impl From<ModeArg> for EvalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Preddet => EvalMode::PredDet,
            ModeArg::Predcls => EvalMode::PredCls,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    PerImage,
    Micro,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::PerImage => Aggregation::PerImage,
            AggregationArg::Micro => Aggregation::Micro,
        }
    }
}
