//! `spherecov`: simulate, fit, cross-validate and evaluate spherical
//! second-moment estimators from the command line.

mod commands;
mod config;
mod outputs;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::{CvArgs, EvalArgs, FitArgs, SimulateArgs};

#[derive(Parser, Debug)]
#[command(name = "spherecov", version, about = "Covariance estimation for random fields on the sphere")]
struct Cli {
    /// Maximum number of worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a sparse Gaussian random field dataset.
    Simulate(SimulateArgs),
    /// Fit mean and second-moment (or lag-h) estimators.
    Fit(FitArgs),
    /// K-fold cross-validation of the second-moment penalty.
    Cv(CvArgs),
    /// Evaluate a fitted estimate on a Fibonacci grid.
    Eval(EvalArgs),
}

/// Exit statuses.
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_IO: u8 = 4;

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spherecov::Error>() {
            return match e {
                e if e.is_numerical() => EXIT_NUMERICAL,
                spherecov::Error::Io(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
        if let Some(e) = cause.downcast_ref::<config::ConfigError>() {
            return match e {
                config::ConfigError::Io(_) => EXIT_IO,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Fit(a) => commands::fit(a),
        Command::Cv(a) => commands::cv(a),
        Command::Eval(a) => commands::eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
