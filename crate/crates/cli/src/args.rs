use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use metasim::evalmetrics::Protocol;
use metasim::objectives::SimilarityMeasure;
use metasim::trainer::Phase;

#[derive(Debug, Parser)]
#[command(name = "metasim", version, about = "Meta semi-supervised metric learning experiments")]
pub struct Cli {
    /// Directory for run artifacts.
    #[arg(long, global = true, env = "METASIM_OUT", default_value = "runs")]
    pub out: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled / unlabeled / test split.
    Gen(GenArgs),
    /// Train an embedding model.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or precomputed embeddings) on a test split.
    Eval(EvalArgs),
    /// Sweep the pseudo pair threshold against the unlabeled pool's oracle labels.
    Audit(AuditArgs),
    /// Write the embeddings of a dataset file.
    Export(ExportArgs),
    /// Rerun a command from its manifest.
    Replay(ReplayArgs),
}

fn fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err(format!("{v} is not strictly between 0 and 1"))
    }
}

fn positive(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{v} must be positive"))
    }
}

fn measure(s: &str) -> Result<SimilarityMeasure, String> {
    s.parse()
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Training classes, split between the labeled and unlabeled pools.
    #[arg(long, default_value_t = 40)]
    pub classes: usize,
    #[arg(long, default_value_t = 30)]
    pub per_class: usize,
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    /// Class-mean radius in units of sigma.
    #[arg(long, default_value_t = 6.0, value_parser = positive)]
    pub sep: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Fraction of training classes that are labeled.
    #[arg(long, default_value_t = 0.5, value_parser = fraction)]
    pub label_frac: f64,
    /// Held-out test classes (defaults to --classes).
    #[arg(long)]
    pub test_classes: Option<usize>,
    /// Number of camera ids to assign (0 for none).
    #[arg(long, default_value_t = 0)]
    pub cameras: u32,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub phase: Phase,
    #[arg(long)]
    pub labeled: PathBuf,
    /// Unlabeled pool (required for the semi phase).
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Start from this checkpoint instead of a fresh model.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub phi: Option<f64>,
    /// Margin of the similarity contrastive loss.
    #[arg(long, value_parser = positive)]
    pub phi_sim: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub lambda_u: Option<f64>,
    #[arg(long)]
    pub c_mt: Option<usize>,
    #[arg(long)]
    pub batch_labeled: Option<usize>,
    #[arg(long)]
    pub batch_unlabeled: Option<usize>,
    #[arg(long)]
    pub batch_meta_val: Option<usize>,
    /// Samples per class in class-balanced batches.
    #[arg(long)]
    pub per_class: Option<usize>,
    #[arg(long, value_parser = measure)]
    pub measure: Option<SimilarityMeasure>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_parser = positive)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = positive)]
    pub lr_decay: Option<f64>,
    #[arg(long)]
    pub lr_every: Option<usize>,
    /// Hidden layer widths for a fresh model.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    pub hidden: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    /// Force ℓ2-normalized outputs (default: on for cosine, off for euclidean).
    #[arg(long, conflicts_with = "no_normalize")]
    pub normalize: bool,
    #[arg(long)]
    pub no_normalize: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "embeddings", conflicts_with = "embeddings")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, required_unless_present = "embeddings")]
    pub test: Option<PathBuf>,
    /// Score a file of precomputed embeddings instead of a checkpoint.
    #[arg(long, conflicts_with = "test")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value = "retrieval")]
    pub protocol: Protocol,
    #[arg(long, value_parser = measure)]
    pub measure: Option<SimilarityMeasure>,
    /// Re-ID: the first N samples of each identity become queries.
    #[arg(long, conflicts_with = "query_uids")]
    pub queries_per_class: Option<usize>,
    /// Re-ID: explicit query uids.
    #[arg(long, value_delimiter = ',')]
    pub query_uids: Option<Vec<u64>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub labeled: PathBuf,
    /// Unlabeled pool whose file carries oracle labels.
    #[arg(long)]
    pub unlabeled: PathBuf,
    /// Explicit ascending ψ grid.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["psi_min", "psi_max", "psi_steps"])]
    pub grid: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.01, value_parser = positive)]
    pub psi_min: f64,
    #[arg(long, default_value_t = 4.0, value_parser = positive)]
    pub psi_max: f64,
    /// Geometric grid size between --psi-min and --psi-max.
    #[arg(long, default_value_t = 40)]
    pub psi_steps: usize,
    #[arg(long)]
    pub c_mt: Option<usize>,
    #[arg(long, value_parser = measure, default_value = "cosine")]
    pub measure: SimilarityMeasure,
    /// Audit at most this many pool samples (all pairs among them).
    #[arg(long, default_value_t = 1000)]
    pub max_samples: usize,
    /// Precision floor used to suggest a threshold.
    #[arg(long, default_value_t = 0.9)]
    pub min_precision: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "embeddings.txt")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Write artifacts here instead of the manifest's output directory.
    #[arg(long)]
    pub into: Option<PathBuf>,
}
