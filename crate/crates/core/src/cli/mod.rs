//! The `mhadapter` command line.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage error, 3 data error.

mod jobs;
mod manifest;
mod tools;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::adapter::AdapterError;
use crate::dataio::DataError;
use crate::metrics::MetricsError;
use crate::training::{TrainError, Weighting};

pub use jobs::{EvalJob, TrainJob};
pub use manifest::{InputDigest, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "mhadapter", version, about = "Train and evaluate an attention adapter over frozen CLIP embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit an adapter and keep the best-validation checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and write metrics, confusion matrix and per-class table.
    Eval(EvalArgs),
    /// Compare analytic gradients with finite differences on random configurations.
    Gradcheck(GradcheckArgs),
    /// Export the patch salience map of one image.
    Attention(AttentionArgs),
    /// Print the trainable-parameter count of a configuration.
    Params(ParamsArgs),
    /// Write a synthetic separable dataset in the container formats.
    Synth(SynthArgs),
    /// Re-run a train or eval job from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub class_weights: PathBuf,
    /// Attribute preset supplying weighting, alpha and heads.
    #[arg(long)]
    pub attribute: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, value_parser = parse_weighting)]
    pub weighting: Option<Weighting>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub peak_lr: Option<f64>,
    /// Add bias terms to every projection.
    #[arg(long)]
    pub bias: bool,
    /// Use raw dot-product logits instead of cosine similarity.
    #[arg(long)]
    pub raw_dot: bool,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub class_weights: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replace the checkpoint's blend ratio (0 gives the zero-shot classifier).
    #[arg(long)]
    pub alpha_override: Option<f64>,
    #[arg(long)]
    pub raw_dot: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Pin the shape as N,D,H,d_b.
    #[arg(long, value_parser = parse_dims)]
    pub dims: Option<(usize, usize, usize, usize)>,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = crate::gradcheck::DEFAULT_TOLERANCE)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub image_id: String,
    #[arg(long, default_value_t = 0)]
    pub view: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long)]
    pub bottleneck: Option<usize>,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, overrides_with = "no_bias")]
    pub bias: bool,
    #[arg(long, overrides_with = "bias")]
    pub no_bias: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 9)]
    pub patches: usize,
    #[arg(long, default_value_t = 200)]
    pub samples: usize,
    #[arg(long, default_value_t = 2)]
    pub views: usize,
    /// Comma-separated patch positions carrying the class signal.
    #[arg(long, value_delimiter = ',')]
    pub signal_patches: Option<Vec<usize>>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_weighting(s: &str) -> Result<Weighting, String> {
    s.parse().map_err(|e: TrainError| e.to_string())
}

fn parse_dims(s: &str) -> Result<(usize, usize, usize, usize), String> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match parts[..] {
        [n, d, h, db] => Ok((n, d, h, db)),
        _ => Err("expected N,D,H,d_b".into()),
    }
}

/// A command failure and its exit code.
#[derive(Debug)]
pub enum Failure {
    Verification(String),
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Verification(_) => EXIT_VERIFY,
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Verification(m) | Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<AdapterError> for Failure {
    fn from(e: AdapterError) -> Self {
        match e {
            AdapterError::InvalidConfig(_) => Failure::Usage(e.to_string()),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::Data(e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::InvalidConfig(_) | TrainError::UnknownAttribute(_) => Failure::Usage(e.to_string()),
            TrainError::Adapter(a) => a.into(),
            TrainError::Data(d) => d.into(),
            _ => Failure::Data(e.to_string()),
        }
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        match e {
            crate::Error::Data(e) => e.into(),
            crate::Error::Adapter(e) => e.into(),
            crate::Error::Metrics(e) => e.into(),
            crate::Error::Train(e) => e.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data(e.to_string())
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train(a) => jobs::train(a),
        Command::Eval(a) => jobs::eval(a),
        Command::Replay(a) => jobs::replay(a),
        Command::Gradcheck(a) => tools::gradcheck(a),
        Command::Attention(a) => tools::attention(a),
        Command::Params(a) => tools::params(a),
        Command::Synth(a) => tools::synth(a),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}
