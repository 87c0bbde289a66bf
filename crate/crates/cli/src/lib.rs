//! File formats and commands behind the `kinecast` binary.
//!
//! The numeric work lives in `kinecast-core`; this crate adds everything that
//! touches the outside world: canonical JSON artifacts, CSV exports, run
//! configuration, and the seven subcommands. Every writer is deterministic
//! (sorted keys, fixed float formatting), so rerunning a command with the
//! same config produces byte-identical files.

pub mod boundary_file;
pub mod commands;
pub mod eval_file;
pub mod jsonio;
pub mod model_file;
pub mod motion_file;
pub mod runconfig;
pub mod sample_file;

use std::fmt;

/// Failure classes of a command, each mapped to a process exit code.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// Bad configuration, unreadable or malformed file, mismatched shapes.
    /// Exit code 1.
    Validation(String),
    /// Numeric failure while running: divergence or a non-finite value.
    /// Exit code 2.
    Numeric(String),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numeric(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(msg) => write!(f, "{msg}"),
            CliError::Numeric(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<kinecast_core::Error> for CliError {
    fn from(e: kinecast_core::Error) -> CliError {
        use kinecast_core::Error::*;
        match e {
            NonFinite(_) | Diverged { .. } | NoConvergence(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}
