//! Batch experiment harness. Each subcommand reads a TOML config, runs one
//! experiment, and writes a machine-readable report (JSON or CSV).
//!
//! Exit codes: 0 success, 2 numerical divergence, 3 configuration error.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Csv,
}

#[derive(Debug, Parser)]
#[command(name = "covector", version, about = "Trajectory-optimization experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Path to the TOML experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Report output path; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Json)]
    format: OutputFormat,

    /// Seed for any randomized inputs (probe points, random controls).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve the discretized problem with the configured inner algorithm.
    Solve,
    /// Check the direct/indirect first-order equivalence at a point.
    Verify,
    /// Check the problem's supplied derivatives against finite differences.
    Gradcheck,
    /// Fixed-eps accuracy degradation across a list of step sizes.
    SweepAccuracy,
    /// Iteration-count collapse of the unit-step gradient method as h shrinks.
    SweepRate,
    /// Basin-of-attraction comparison between direct and indirect updates.
    Basin,
    /// Gradient noise introduced by control-dependent grid adaptation.
    AdaptiveNoise,
    /// Hamiltonianize a built-in ODE and verify conservation of H.
    Hamiltonianize,
    /// Run the outer refinement schedule with warm starts.
    Refine,
}

/// Errors that map to the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Exit 3.
    Config(String),
    /// Exit 2.
    Divergence(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "configuration error: {msg}"),
            CliError::Divergence(msg) => write!(f, "numerical divergence: {msg}"),
        }
    }
}

impl From<covector::Error> for CliError {
    fn from(e: covector::Error) -> Self {
        match e {
            covector::Error::PropagationDiverged { .. }
            | covector::Error::AdjointDiverged { .. }
            | covector::Error::DegenerateGrid { .. }
            | covector::Error::SingularMetric => CliError::Divergence(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Solve => commands::cmd_solve(&cli),
        Command::Verify => commands::cmd_verify(&cli),
        Command::Gradcheck => commands::cmd_gradcheck(&cli),
        Command::SweepAccuracy => commands::cmd_sweep_accuracy(&cli),
        Command::SweepRate => commands::cmd_sweep_rate(&cli),
        Command::Basin => commands::cmd_basin(&cli),
        Command::AdaptiveNoise => commands::cmd_adaptive_noise(&cli),
        Command::Hamiltonianize => commands::cmd_hamiltonianize(&cli),
        Command::Refine => commands::cmd_refine(&cli),
    };
    match outcome {
        Ok(report) => match report::emit(&report, cli.out.as_deref(), cli.format) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(3)
            }
        },
        Err(CliError::Divergence(msg)) => {
            eprintln!("numerical divergence: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(3)
        }
    }
}
