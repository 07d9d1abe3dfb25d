//! Command-line front end.
//!
//! Thin orchestration over the core library: argument parsing, flat
//! key-value config files, run manifests, and the five subcommands
//! (`simulate`, `train`, `eval`, `trace`, `bench`). All real work lives
//! in the core crate; this one only moves bytes between files and calls
//! into it, which keeps every command drivable from integration tests
//! without spawning a process.
//!
//! Exit codes: 0 success, 2 for validation problems (bad flags, bad
//! files, shape mismatches), 3 for numerical aborts (non-finite training
//! loss, kernel disagreement).

pub mod commands;
pub mod config;
pub mod manifest;

use thiserror::Error;

/// Everything a subcommand can fail with, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError::Numerical(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

/// Size the global worker pool. Precedence: `--threads`, then the
/// `S2P2_THREADS` environment variable, then the runtime default. Safe to
/// call more than once; only the first sizing wins.
pub fn configure_threads(requested: Option<usize>) {
    let from_env = || {
        std::env::var("S2P2_THREADS").ok().and_then(|v| v.parse::<usize>().ok())
    };
    let Some(n) = requested.or_else(from_env) else {
        return;
    };
    if n == 0 {
        return;
    }
    // A pool may already exist (tests, embedding); that is fine.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}
