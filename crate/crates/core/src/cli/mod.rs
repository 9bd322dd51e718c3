//! Command-line front end: simulations, convergence and stability studies,
//! the timing benchmark and gradient validation.
//!
//! Every command writes CSV files and a `manifest.json` with the resolved
//! settings and a sha256 hash of each file. Exit codes are 0 on success, 2
//! for configuration errors, 3 when an integration diverges and 4 for I/O
//! errors.

mod commands;
pub mod config;
mod output;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;

pub use config::RunOptions;
pub use output::CSV_SCHEMA;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CliError {
    Config(String),
    Divergence(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Io(_) => 4,
        }
    }

    pub(crate) fn from_library(e: Error) -> Self {
        match e {
            Error::InvalidArgument(m) | Error::Configuration(m) | Error::Alignment(m) => CliError::Config(m),
            e => CliError::Divergence(e.to_string()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Divergence(m) => write!(f, "integration diverged: {m}"),
            CliError::Io(m) => write!(f, "I/O error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(name = "multirate", version, about = "Variational multirate integrators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommandArgs {
    /// TOML file with the same keys as the flags; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub options: RunOptions,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one trajectory; writes trajectory, energy and manifest files.
    Simulate(CommandArgs),
    /// Errors against a fine single-rate reference over a step sweep.
    Converge(CommandArgs),
    /// Linear stability of the test oscillator over a grid of dT and p.
    Stability(CommandArgs),
    /// Newton iterations and solve/assembly times at fixed micro step.
    Bench(CommandArgs),
    /// Checks system gradients against finite differences at random states.
    Validate(CommandArgs),
}

/// Parses the process arguments, runs the command and returns the exit code.
pub fn run() -> i32 {
    run_from(std::env::args_os())
}

pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command and returns a one-line summary.
pub fn execute(command: Command) -> Result<String, CliError> {
    let args = match &command {
        Command::Simulate(a) | Command::Converge(a) | Command::Stability(a) | Command::Bench(a) | Command::Validate(a) => a,
    };
    let file = match &args.config {
        Some(path) => RunOptions::from_file(path)?,
        None => RunOptions::default(),
    };
    let opts = args.options.clone().over(file);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(e.to_string()))?;
    pool.install(|| match command {
        Command::Simulate(_) => commands::simulate(&opts),
        Command::Converge(_) => commands::converge(&opts),
        Command::Stability(_) => commands::stability(&opts),
        Command::Bench(_) => commands::bench(&opts),
        Command::Validate(_) => commands::validate(&opts),
    })
}
