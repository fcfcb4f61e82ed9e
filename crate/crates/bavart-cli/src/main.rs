//! Batch front end for the BAVART engine. Every subcommand takes a TOML run
//! configuration and exits 0 on success, 1 on runtime failures (I/O, data,
//! estimation) and 2 on configuration errors, printing a single
//! machine-readable line to stderr that names the offending field.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bavart::sampler::SamplerError;

#[derive(Debug)]
pub enum CliError {
    /// The run configuration is invalid; `field` is the dotted path of the
    /// offending key (for example `config.sweeps` or `girf.shock`).
    Config { field: String, message: String },
    /// Anything that goes wrong after the configuration checked out.
    Runtime { message: String },
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime {
            message: e.to_string(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Runtime { .. } => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config { field, message } => write!(f, "error {field}: {message}"),
            CliError::Runtime { message } => write!(f, "error: {message}"),
        }
    }
}

impl From<SamplerError> for CliError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Config { field, message } => CliError::Config { field, message },
            other => CliError::runtime(other),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "bavart",
    version,
    about = "Bayesian additive vector autoregressive trees: estimation, \
             forecasting, backtesting and impulse responses"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and store posterior draws under <output_dir>/draws.
    Estimate { config: PathBuf },
    /// Expanding-window forecast evaluation with MSFE and CRPS tables.
    Backtest { config: PathBuf },
    /// Generalized impulse responses from stored draws.
    Girf { config: PathBuf },
    /// Generate synthetic data with a ground-truth sidecar.
    Simulate { config: PathBuf },
    /// Posterior-median splitting-rule counts from stored draws.
    Importance { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate { config } => commands::cmd_estimate(config),
        Command::Backtest { config } => commands::cmd_backtest(config),
        Command::Girf { config } => commands::cmd_girf(config),
        Command::Simulate { config } => commands::cmd_simulate(config),
        Command::Importance { config } => commands::cmd_importance(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
