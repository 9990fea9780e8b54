//! `gpgs`: densify a COLMAP sparse model with Gaussian-process predictions.

mod commands;
mod config;

use std::path::Path;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{Flags, RunConfig, SEED_ENV};

#[derive(Debug, Parser)]
#[command(name = "gpgs", version, about = "Densify sparse SfM point clouds with Gaussian processes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Rank images by linked features and write the key frames' pixel-to-point datasets.
    BuildDataset(Flags),
    /// Train the six output GPs on a dataset; writes the model and the loss curves.
    Train(Flags),
    /// Sample, predict, filter and merge; writes the densified PLY and a variance report.
    Densify(Flags),
    /// Train on a seeded split of a dataset and score the held-out part.
    Evaluate(Flags),
    /// Every step above in sequence.
    Pipeline(Flags),
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] gpgs_core::Error),
}

impl CliError {
    fn read(path: &Path, e: std::io::Error) -> Self {
        if e.kind() == std::io::ErrorKind::NotFound {
            CliError::Input(format!("missing file {}", path.display()))
        } else {
            CliError::Input(format!("cannot read {}: {e}", path.display()))
        }
    }

    fn write(path: &Path, e: std::io::Error) -> Self {
        CliError::Input(format!("cannot write {}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Input(_) => 2,
            CliError::Core(e) => commands::core_exit_code(e),
        }
    }
}

macro_rules! from_core {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Core(e.into())
            }
        }
    )*};
}

from_core!(
    gpgs_core::sfm::SfmError,
    gpgs_core::gp::GpError,
    gpgs_core::densify::DensifyError,
    gpgs_core::metrics::MetricsError
);

fn run(command: Command) -> Result<(), CliError> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let resolve = |flags| RunConfig::resolve(flags, env_seed.as_deref());
    match command {
        Command::BuildDataset(f) => commands::build_dataset(&resolve(f)?),
        Command::Train(f) => commands::train(&resolve(f)?),
        Command::Densify(f) => commands::densify(&resolve(f)?),
        Command::Evaluate(f) => commands::evaluate(&resolve(f)?),
        Command::Pipeline(f) => commands::pipeline(&resolve(f)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("gpgs: error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
