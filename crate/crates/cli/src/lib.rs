//! File formats and commands behind the `augsweep` binary.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;
pub mod manifest;

pub use args::{Cli, Command};
pub use commands::run;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    /// 1 for usage or configuration problems, 2 for everything that failed
    /// while doing the work.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}
