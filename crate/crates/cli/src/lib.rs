//! Batch front-end for `brw-core`: configuration, orchestration,
//! persistence and reports.

pub mod acceptance;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod oracle_cache;
pub mod pipeline;
pub mod records;

pub use config::RunConfig;
pub use diagnostics::Verdict;
pub use error::{CliError, CliResult};
