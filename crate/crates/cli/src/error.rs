use std::path::Path;

use brw_core::BrwError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    /// The model violates an invariant (for example `ρ ≤ 1`).
    #[error("model error: {0}")]
    Model(String),
    #[error("{0}")]
    Core(#[from] BrwError),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl CliError {
    pub fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.display().to_string(), message: e.to_string() }
    }

    /// 3 for exhausted size budgets, 2 for everything else that stops a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if e.is_capacity() => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
