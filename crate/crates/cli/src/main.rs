//! `ldpca`: functional PCA of densities observed through samples.
//!
//! Exit status is 0 on success, 1 on a numerical failure or a fit that did
//! not converge (outputs are still written), and 2 on a usage or input error.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ldpca_core::Error;

use commands::{CompositionalArgs, FitArgs, SimulateArgs, TwoStepArgs};

#[derive(Debug, Parser)]
#[command(name = "ldpca", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the latent density model by Monte Carlo EM.
    Fit(FitArgs),
    /// PCA of clr-transformed kernel density estimates.
    Twostep(TwoStepArgs),
    /// Run the simulation study against oracle estimates.
    Simulate(SimulateArgs),
    /// Fit count compositions.
    Compositional(CompositionalArgs),
}

pub enum Outcome {
    Success,
    NotConverged,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(
            Error::NonPositive { .. }
            | Error::NonFinite { .. }
            | Error::InvalidModel(_)
            | Error::ZeroVariance { .. }
            | Error::ImproperPrior { .. }
            | Error::NonFiniteObjective { .. },
        ) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let threads = match &cli.command {
        Command::Fit(a) => a.common.threads,
        Command::Twostep(a) => a.common.threads,
        Command::Simulate(a) => a.common.threads,
        Command::Compositional(a) => a.common.threads,
    };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match &cli.command {
        Command::Fit(a) => commands::run_fit(a),
        Command::Twostep(a) => commands::run_twostep(a),
        Command::Simulate(a) => commands::run_simulate(a),
        Command::Compositional(a) => commands::run_compositional(a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::NotConverged) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
