//! The `codareg` command-line application.
//!
//! Every run writes one directory holding its outputs and a
//! `manifest.json` with the resolved configuration, seed, input digests and
//! output digests.

pub mod commands;
pub mod config;
pub mod ingest;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use commands::FittedModel;
pub use config::{ReferenceMode, RunConfig};
pub use ingest::{ingest_csv, Dataset, IngestError};
pub use output::RunManifest;

pub const EXIT_OK: i32 = 0;
/// Bad arguments, configuration or file system trouble.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INGEST: i32 = 2;
/// The sampler, an estimator or a simulation failed.
pub const EXIT_SAMPLER: i32 = 3;
pub const EXIT_CONVERGENCE: i32 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Ingest { path: PathBuf, source: IngestError },
    #[error("{0}")]
    Failed(String),
    #[error("convergence check failed: {0}")]
    Convergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) | Self::Io { .. } => EXIT_USAGE,
            Self::Ingest { .. } => EXIT_INGEST,
            Self::Failed(_) => EXIT_SAMPLER,
            Self::Convergence(_) => EXIT_CONVERGENCE,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Self {
        let path = path.into();
        move |source| Self::Io { path, source }
    }
}

#[derive(Debug, Parser)]
#[command(name = "codareg", version, about = "Hierarchical Dirichlet regression for compositional data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Plain-text `key = value` configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Overrides `seed` from the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory [default: codareg-out].
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for chains and replicates.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Validate inputs and print the resolved configuration, then stop.
    #[arg(long, global = true)]
    pub dry_run: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a Dirichlet by maximum likelihood and rank components by shape.
    SelectReference(SelectArgs),
    /// Sample the posterior of the hierarchical regression.
    Fit(FitArgs),
    /// Posterior predictive summaries for new covariate rows.
    Predict(PredictArgs),
    /// Convergence and fit report of a finished fit.
    Diagnose(DiagnoseArgs),
    /// Run one of the simulation studies.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Data CSV.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Use this component instead of the recommended one.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Data CSV.
    #[arg(short, long)]
    pub input: PathBuf,
    /// `auto` or a component name; overrides the configuration.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Output directory of a previous `fit`.
    #[arg(long, value_name = "DIR")]
    pub fit: PathBuf,
    /// CSV with the covariate and group columns used in the fit.
    #[arg(short, long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    /// Output directory of a previous `fit`.
    #[arg(long, value_name = "DIR")]
    pub fit: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Reference,
    Entropy,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PathArg {
    Vectorized,
    PerObservation,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum)]
    pub scenario: Scenario,
    /// Precision values (regression), comma separated [default: 13,5,2].
    #[arg(long, value_delimiter = ',')]
    pub phi: Vec<f64>,
    /// Observations per fit (reference) or per group (regression)
    /// [default: 2000 or 10,15,30].
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    /// Replicates per cell [default: 20].
    #[arg(long)]
    pub replicates: Option<usize>,
    /// 100 replicates per cell.
    #[arg(long, conflicts_with = "replicates")]
    pub full: bool,
    /// Gradient implementations to compare (regression).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub path: Vec<PathArg>,
    /// Component counts (entropy) [default: 3..13].
    #[arg(long, value_delimiter = ',')]
    pub components: Vec<usize>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let arguments = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli, arguments) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
