//! Command-line driver. Every command produces one artifact: a JSON
//! document embedding the tool version, seed and resolved configuration,
//! optionally with a numeric table (`--format csv|dat`) and extra files
//! written under `--out`.
//!
//! Exit status: 0 on success, 2 for configuration errors, 3 for domain or
//! precondition errors, 4 when a checked invariant fails in strict mode.

mod args;
mod commands;
mod output;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command, Common, Experiment, Format};
pub use output::{Check, Outcome, Table};

use crate::error::Error;

pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DOMAIN: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

/// Failure of a command, carrying its exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{0}")]
    Domain(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Domain(_) => EXIT_DOMAIN,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Dsl(d) => CliError::Config(d.to_string()),
            Error::Io(io) => CliError::Config(io.to_string()),
            other => CliError::Domain(other),
        }
    }
}

impl From<crate::dsl::DslError> for CliError {
    fn from(e: crate::dsl::DslError) -> Self {
        CliError::Config(e.to_string())
    }
}

/// Parses `args`, runs the command and returns the exit status.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { 0 };
        }
    };
    if let Some(j) = cli.common.jobs {
        // a second call in one process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("framelab: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command, writes its outputs and returns the exit status.
pub fn run(cli: &Cli) -> Result<i32, CliError> {
    let outcome = commands::execute(&cli.command, &cli.common)?;
    let failed = outcome.write(cli)?;
    if failed && cli.common.strict() {
        eprintln!("framelab: invariant check failed");
        return Ok(EXIT_INVARIANT);
    }
    Ok(0)
}
