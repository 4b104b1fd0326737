#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};

use config::{Overrides, RunConfig};
use error::CliResult;

/// Multiexponential decay estimation experiments.
#[derive(Debug, Parser)]
#[command(name = "l2f", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic signal (noiseless and noisy columns) as CSV.
    Simulate,
    /// Fit the shifted, weighted signal and dump coefficients and the error curve.
    Expand,
    /// Dump the filtered spectrum and its annotated peak.
    Spectrum,
    /// Run Monte Carlo batches for every (method, SNR) cell and write summary tables.
    Experiment,
}

fn run(cli: &Cli) -> CliResult<()> {
    let cfg = RunConfig::resolve(&cli.overrides)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Expand => commands::expand(&cfg),
        Command::Spectrum => commands::spectrum(&cfg),
        Command::Experiment => commands::experiment(&cfg),
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
