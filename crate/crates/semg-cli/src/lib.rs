//! IO, file formats and the command-line pipeline around `semg-core`.

pub mod clock;
pub mod commands;
pub mod config;
pub mod io;
pub mod svgplot;

use std::fmt;

/// Errors mapped to process exit codes by `main`.
#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or configuration: exit code 1.
    Usage(String),
    /// Unreadable, corrupt or incompatible data: exit code 2.
    Data(String),
    /// Real-time budget violated under `--enforce-realtime`: exit code 3.
    RealtimeBudget { max_s: f64, budget_s: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::RealtimeBudget { .. } => 3,
        }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError::Data(msg.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "usage error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::RealtimeBudget { max_s, budget_s } => write!(
                f,
                "real-time budget violated: max window latency {max_s:.4} s over budget {budget_s:.4} s"
            ),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
