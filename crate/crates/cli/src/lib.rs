//! Subcommand implementations behind the `clsr` binary.

pub mod commands;
pub mod config;

use std::fmt;
use std::path::Path;

pub use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    /// Schema violation, missing path or invalid value.
    Config(String),
    /// Training hit a non-finite value.
    NonFinite(String),
    /// A report or log failed its consistency check.
    Invariant(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Config(_) => 2,
            CliError::NonFinite(_) => 3,
            CliError::Invariant(_) => 4,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Runtime(format!("{}: {err}", path.display()))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::NonFinite(m) => write!(f, "aborted: {m}"),
            CliError::Invariant(m) => write!(f, "invariant failure: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
