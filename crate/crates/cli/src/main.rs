//! `stratfit`: fit principal-strata mixtures, regenerate diagnostics and run
//! recovery simulations.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure.

mod diagnose_cmd;
mod error;
mod fit_cmd;
mod ingest;
mod report;
mod simulate_cmd;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::{CliError, CliResult};

/// Caps the worker threads used for starts and replicates.
const THREADS_ENV: &str = "STRATFIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "stratfit", version, about = "Principal stratification with finite-mixture likelihoods")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the model to a case CSV and write reports.
    Fit(fit_cmd::FitArgs),
    /// Run a simulation grid from a TOML config.
    Simulate(simulate_cmd::SimulateArgs),
    /// Regenerate diagnostics from a saved fit without refitting.
    Diagnose(diagnose_cmd::DiagnoseArgs),
}

fn configure_threads() -> CliResult<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("{THREADS_ENV} must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Input(format!("cannot configure {threads} threads: {e}")))
}

fn run(cli: &Cli) -> CliResult<()> {
    configure_threads()?;
    match &cli.command {
        Command::Fit(args) => fit_cmd::run(args),
        Command::Simulate(args) => simulate_cmd::run(args),
        Command::Diagnose(args) => diagnose_cmd::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
