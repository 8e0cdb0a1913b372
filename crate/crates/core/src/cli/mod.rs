//! Command-line front end: TOML configs, subcommands, CSV/JSON output and sweeps.

pub mod commands;
pub mod config;
pub mod csv_io;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::error::Error;

#[derive(Debug, Parser)]
#[command(
    name = "gameopt",
    version,
    about = "Price, hedge and verify game contracts on a binomial lattice"
)]
pub struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, overriding `output.dir`.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for enumeration and sweeps.
    #[arg(long, global = true, value_name = "K")]
    pub workers: Option<usize>,
    /// Tolerance override, e.g. `oracle=1e-9`; repeatable.
    #[arg(long = "tol-override", global = true, value_name = "KEY=VALUE")]
    pub tol_override: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Acceptable price(s), solution fields and stopping regions.
    Price,
    /// Brute-force game values compared with the reflected solution.
    Oracle,
    /// Forward replication and price probes along every path.
    Replicate,
    /// Stopping regions only.
    Regions,
    /// Both parties' prices over a list of values of one numeric config leaf.
    Sweep {
        /// Dotted config path, e.g. `contract.penalty`.
        #[arg(long)]
        axis: String,
        /// Comma-separated values.
        #[arg(
            long,
            value_delimiter = ',',
            required = true,
            allow_hyphen_values = true
        )]
        values: Vec<f64>,
    },
}

/// Process exit codes.
pub mod exit {
    pub const OK: u8 = 0;
    pub const CONFIG: u8 = 2;
    pub const SOLVER: u8 = 3;
    pub const TOO_LARGE: u8 = 4;
    pub const BATTERY: u8 = 5;
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::TooLarge { .. } | Error::TooManyPaths { .. } => exit::TOO_LARGE,
        e if e.is_config_error() => exit::CONFIG,
        _ => exit::SOLVER,
    }
}

/// Parses `args` and runs the command, printing results to stdout and errors to stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                exit::CONFIG
            } else {
                exit::OK
            };
        }
    };
    match commands::execute(&cli) {
        Ok(outcome) => {
            print!("{}", outcome.stdout);
            for line in &outcome.failures {
                eprintln!("{line}");
            }
            outcome.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
