//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage, configuration, I/O or remote predictor
//! failure, 2 invalid or insufficient data, 3 numerical failure.

mod artifacts;
mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use artifacts::{histogram, Bin, Provenance};
pub use config::{
    derive_seed, ConfigError, DataConfig, DensityConfig, RunConfig, SweepConfig, SyntheticConfig,
    SCHEMA_VERSION,
};

use crate::conditional::DistError;
use crate::corpus::CorpusError;
use crate::density::DensityError;
use crate::mi_sweep::SweepError;
use crate::predictor::PredictError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    ConfigFile(#[from] ConfigError),
    #[error("{0}")]
    Config(String),
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("data: {0}")]
    Data(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Density(#[from] DensityError),
    #[error(transparent)]
    Dist(#[from] DistError),
    #[error(transparent)]
    Predict(#[from] PredictError),
    #[error(transparent)]
    Sweep(#[from] SweepError),
}

fn predict_code(e: &PredictError) -> i32 {
    match e {
        PredictError::NoTargets(_) | PredictError::IncompatibleFamily { .. } => 2,
        PredictError::NonFiniteLoss { .. } | PredictError::NonFiniteValidation { .. } => 3,
        _ => 1,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigFile(_) | CliError::Config(_) | CliError::Io(_) => 1,
            CliError::Data(_) => 2,
            CliError::Corpus(CorpusError::Io { .. }) => 1,
            CliError::Corpus(_) => 2,
            CliError::Density(DensityError::EmptySample(_)) => 2,
            CliError::Density(_) => 3,
            CliError::Dist(DistError::OutsideSupport { .. }) => 2,
            CliError::Dist(_) => 3,
            CliError::Predict(e) => predict_code(e),
            CliError::Sweep(e) => match e {
                SweepError::Predict(p) => predict_code(p),
                SweepError::Dist(DistError::OutsideSupport { .. }) => 2,
                SweepError::Dist(_) => 3,
                SweepError::Io(_) => 1,
                _ => 2,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "ctxmi",
    version,
    about = "Mutual information between a word-level signal and its context"
)]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true, default_value = "ctxmi.toml")]
    config: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (all cores by default).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate and normalize the configured corpus.
    Ingest,
    /// Fit the unconditional density of each feature.
    FitPrior,
    /// Train the conditional predictor of each feature.
    Train,
    /// Estimate the MI grid of each feature and their average.
    Sweep,
    /// Generate a corpus from the configured synthetic process.
    Synth,
    /// Rebuild plateau reports and figures from existing grid CSVs.
    Report,
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    let ctx = commands::Context::new(cfg);
    match cli.command {
        Command::Ingest => commands::ingest(&ctx),
        Command::FitPrior => commands::fit_prior(&ctx),
        Command::Train => commands::train_all(&ctx),
        Command::Sweep => commands::sweep_all(&ctx),
        Command::Synth => commands::synth(&ctx),
        Command::Report => commands::report(&ctx),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    if let Some(t) = cli.threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global();
    }
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
