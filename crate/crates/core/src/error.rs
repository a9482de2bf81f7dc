use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BrwError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("capacity exceeded: {0}")]
    Capacity(String),
    #[error("grid mass leakage {leaked:e} exceeds {limit:e}")]
    Truncation { leaked: f64, limit: f64 },
    #[error("rejection acceptance rate {0:e} below 1e-4; envelope is misconfigured")]
    Envelope(f64),
    #[error("population overflow: {live} live particles exceed cap {cap}")]
    PopulationOverflow { live: usize, cap: usize },
    #[error("range error: {0}")]
    Range(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
}

impl BrwError {
    /// True for errors caused by exhausting a size budget rather than bad input.
    pub fn is_capacity(&self) -> bool {
        matches!(self, BrwError::Capacity(_) | BrwError::PopulationOverflow { .. })
    }
}

pub type Result<T> = std::result::Result<T, BrwError>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(BrwError::Domain(msg.into()))
}
