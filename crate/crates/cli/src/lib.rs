//! Command-line front end: configuration, persistence, experiment recipes.
//!
//! Subcommands: identify | simulate | train | evaluate | benchmark | sweep.
//! Every command is reproducible from (config file, seed) alone; the config
//! hash is embedded in every output file header.

use std::fmt;

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod hash;
pub mod runner;
pub mod trace;
pub mod train;

/// Command-level failures, mapped to process exit codes.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration: exit code 2.
    Config(String),
    /// Runtime failure: exit code 3.
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<dwmlab_core::Error> for CliError {
    fn from(e: dwmlab_core::Error) -> Self {
        match e {
            dwmlab_core::Error::Config(m) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
