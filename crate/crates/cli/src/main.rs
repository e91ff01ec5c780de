//! `hkbary`: barycenters, the Gaussian demo, the Dirac closed form and the
//! equality verifier from the command line.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::SharedArgs;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "hkbary", version, about = "Constrained Hellinger-Kantorovich barycenters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Barycenter of measures given as `x,mass` or `x,y,mass` CSV files.
    Barycenter {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        shared: SharedArgs,
    },
    /// Barycenters of two truncated Gaussians on a uniform grid of [0, 1].
    GaussiansDemo {
        #[command(flatten)]
        shared: SharedArgs,
    },
    /// Closed-form barycenter of weighted Dirac masses.
    Dirac {
        /// Atom location `x` or `x,y`; repeat once per input.
        #[arg(long = "point", required = true, allow_hyphen_values = true)]
        points: Vec<String>,
        /// Atom mass; repeat once per input.
        #[arg(long = "mass", required = true)]
        masses: Vec<f64>,
        #[command(flatten)]
        shared: SharedArgs,
    },
    /// Compares the four formulations' values on the given inputs.
    Verify {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[command(flatten)]
        shared: SharedArgs,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Barycenter { inputs, shared } => commands::barycenter(&inputs, &config::resolve(shared)?),
        Command::GaussiansDemo { shared } => commands::demo(&config::resolve(shared)?),
        Command::Dirac { points, masses, shared } => commands::dirac(&points, &masses, &config::resolve(shared)?),
        Command::Verify { inputs, shared } => commands::verify(&inputs, &config::resolve(shared)?),
    }
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
    match run(cli) {
        Ok(out) => {
            println!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            if let CliError::VerifyFailed(text) | CliError::NotConverged(text) = &e {
                println!("{text}");
            }
            eprintln!("hkbary: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
