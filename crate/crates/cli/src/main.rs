//! `frb`: batch front-end for filtered randomized benchmarking.

mod commands;
mod config;
mod output;
mod simulate;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use output::CliResult;

#[derive(Parser, Debug)]
#[command(name = "frb", version, about = "Filtered randomized benchmarking with random circuits")]
struct Cli {
    /// Worker threads; defaults to the available parallelism. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the protocol and write per-(λ, m) estimates.
    Simulate(simulate::SimulateArgs),
    /// Spectral gap of a moment operator, computed or tabulated.
    Gap(commands::GapArgs),
    /// Fit A r^m to an estimates CSV.
    Fit(commands::FitArgs),
    /// Sequence-length and sampling bounds.
    Bounds(commands::BoundsArgs),
    /// Second moments of filter functions.
    Moments(commands::MomentsArgs),
    /// Check the certified perturbation bounds.
    PerturbCheck(commands::PerturbArgs),
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(output::input("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(k).build_global().map_err(|e| output::input(e.to_string()))?;
    }
    match &cli.command {
        Command::Simulate(a) => simulate::run(a),
        Command::Gap(a) => commands::gap(a),
        Command::Fit(a) => commands::fit(a),
        Command::Bounds(a) => commands::bounds(a),
        Command::Moments(a) => commands::moments(a),
        Command::PerturbCheck(a) => commands::perturb_check(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("frb: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
