//! The `subfusion` command-line tool.
//!
//! Every command reads an optional `--config` file of `key = value` lines; any key can
//! also be given as a `--key value` flag, and flags win. Exit codes: 0 success,
//! 1 validation error, 2 I/O error, 3 numerical failure.

mod commands;
pub mod config;
pub mod files;

use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::error::Error;
pub use config::RunConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Validation = 1,
    Io = 2,
    Numerical = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Validation,
            message: message.into(),
        }
    }

    pub fn io(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Io,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            kind: ExitKind::Numerical,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Diverged(_) | Error::NonFiniteKl(..) | Error::NotPositiveDefinite => Self::numerical(e.to_string()),
            _ => Self::validation(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "subfusion", version, about = "Sparse regression fused across subgroups")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset and its true coefficients.
    Simulate(CommandArgs),
    /// Fit one method at fixed (lambda, gamma).
    Fit(CommandArgs),
    /// Select (lambda, gamma) by k-fold cross-validation.
    Cv(CommandArgs),
    /// Compare methods over replicated simulations.
    Compare(CommandArgs),
    /// Compute fusion weights for a dataset.
    Weights(CommandArgs),
}

#[derive(Debug, clap::Args)]
struct CommandArgs {
    /// File of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `--key value` overrides.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

impl CommandArgs {
    fn run_config(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        cfg.apply_overrides(&self.overrides)?;
        Ok(cfg)
    }
}

/// Runs a command given as a full argument list (program name first).
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(ExitKind::Validation as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.kind as u8)
        }
    }
}

fn execute(command: &Command) -> Result<(), CliError> {
    let (args, run): (&CommandArgs, fn(&RunConfig) -> Result<(), CliError>) = match command {
        Command::Simulate(a) => (a, commands::simulate),
        Command::Fit(a) => (a, commands::fit),
        Command::Cv(a) => (a, commands::cv),
        Command::Compare(a) => (a, commands::compare),
        Command::Weights(a) => (a, commands::weights),
    };
    let cfg = args.run_config()?;
    let threads: usize = cfg.get_or("threads", 0)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::validation(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run(&cfg))
}
