//! `gwlab`: command-line driver for GW solvers, correlation scans, adversarial
//! search and plan analysis.
//!
//! Exit codes: 0 on success, 1 for bad flags or input, 2 when a solver fails.

mod commands;
mod manifest;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gwlab::Error;

#[derive(Debug, Parser)]
#[command(name = "gwlab", version, about = "Gromov-Wasserstein plans between discrete measures")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a GW problem between two measures.
    Solve(commands::SolveArgs),
    /// Scan the 1D correlation parameter, optionally after Gaussian smoothing.
    Mscan(commands::MscanArgs),
    /// Search for point sets on which both monotone rearrangements are suboptimal.
    Adversarial(commands::AdversarialArgs),
    /// Structure report of a plan, or the separation threshold K0.
    Analyze(commands::AnalyzeArgs),
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Singular | Error::Solver(_) => 2,
        _ => 1,
    }
}

fn init_threads() -> Result<(), String> {
    let Ok(value) = std::env::var("GWLAB_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("GWLAB_THREADS must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn run(cli: &Cli) -> gwlab::Result<()> {
    let (manifest, dir) = match &cli.command {
        Command::Solve(a) => (Some(commands::solve(a)?), Some(&a.out)),
        Command::Mscan(a) => (Some(commands::run_mscan(a)?), Some(&a.out_dir)),
        Command::Adversarial(a) => (Some(commands::adversarial(a)?), Some(&a.out_dir)),
        Command::Analyze(a) => (commands::analyze(a)?, a.out_dir.as_ref()),
    };
    if let (Some(m), Some(dir)) = (manifest, dir) {
        m.write(dir)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = init_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
