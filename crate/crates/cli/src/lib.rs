//! Library surface of the experiment driver; the `fedsim` binary is a
//! thin argument parser over [`commands`].

pub mod commands;
pub mod config;

use std::fmt;

/// Failures split by exit code: configuration and validation problems
/// exit with 2, runtime failures with 1.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(message.into())
    }

    pub fn runtime(error: impl Into<anyhow::Error>) -> Self {
        CliError::Runtime(error.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(message) => write!(f, "invalid configuration: {message}"),
            CliError::Runtime(error) => write!(f, "{error:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<fedsim_core::Error> for CliError {
    fn from(error: fedsim_core::Error) -> Self {
        CliError::Runtime(error.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(error: std::io::Error) -> Self {
        CliError::Runtime(error.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(error: serde_json::Error) -> Self {
        CliError::Runtime(error.into())
    }
}
