//! `topk-lab`: bound-verification campaigns, gradient checks, synthetic
//! data and the two-stage cardinality-aware training pipeline.
//!
//! Exit codes: 0 success, 1 bound violation or failed check, 2 usage,
//! configuration or I/O error.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

pub mod commands;
pub mod config;
pub mod data;
pub mod io;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failure(String),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failure(_) => 1,
        }
    }
}

impl From<topk_core::Error> for CliError {
    fn from(e: topk_core::Error) -> Self {
        match e {
            topk_core::Error::NonFinite(_) => CliError::Failure(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// What a successful run found.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Ok,
    /// A bound was violated or a check failed.
    Failed,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Ok => 0,
            Outcome::Failed => 1,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "topk-lab", version, about = "Top-k surrogate losses: bound checks and cardinality-aware training")]
pub struct Cli {
    /// Master seed; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config's out_dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "TOPK_LAB_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo check of the conditional-regret bounds.
    VerifyBounds(VerifyArgs),
    /// Finite-difference check of every loss kernel and both models.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic Gaussian-cluster dataset as CSV.
    Synth(SynthArgs),
    /// Train the linear base classifier.
    TrainBase,
    /// Train one selector per K-set of the schedule against the base model.
    TrainSelector(SelectorArgs),
    /// Emit accuracy versus cardinality for top-k and the selectors.
    Curve(CurveArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GammaN {
    /// Size of the cardinality set.
    KSize,
    /// Number of classes.
    Classes,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Comma-separated theorem names, e.g. comp_log,cs_cstnd_hinge. Default: all 16.
    #[arg(long, value_delimiter = ',')]
    pub theorems: Vec<String>,
    #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
    pub trials: u64,
    /// Fix k for the top-k theorems instead of drawing it per trial.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 8)]
    pub max_n: usize,
    #[arg(long, value_enum, default_value_t = GammaN::KSize)]
    pub cardinality_n: GammaN,
    #[arg(long, default_value_t = topk_core::losses::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = topk_core::losses::DEFAULT_RHO)]
    pub rho: f64,
    /// Also run this many expectation-level configurations per theorem.
    #[arg(long, default_value_t = 0)]
    pub grid_configs: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 100)]
    pub points: usize,
    #[arg(long, default_value_t = topk_core::losses::DEFAULT_ALPHA)]
    pub alpha: f64,
    #[arg(long, default_value_t = topk_core::losses::DEFAULT_RHO)]
    pub rho: f64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub spread: Option<f64>,
    #[arg(long)]
    pub overlap: Option<f64>,
    /// Destination CSV; default `<out>/synth.csv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SelectorArgs {
    /// Base checkpoint; default `<out>/base.json`.
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Train only this K-set, e.g. 1,2,4.
    #[arg(long, value_delimiter = ',')]
    pub kset: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// Base checkpoint; default `<out>/base.json`.
    #[arg(long)]
    pub base: Option<PathBuf>,
}

/// Runs a parsed command, writing human-readable progress to `log`.
pub fn run(cli: &Cli, log: &mut (dyn Write + Send)) -> Result<Outcome, CliError> {
    match cli.threads {
        Some(0) => Err(CliError::Usage("--threads must be >= 1".into())),
        Some(t) => {
            let pool =
                rayon::ThreadPoolBuilder::new().num_threads(t).build().map_err(|e| CliError::Usage(e.to_string()))?;
            pool.install(|| commands::dispatch(cli, log))
        }
        None => commands::dispatch(cli, log),
    }
}
