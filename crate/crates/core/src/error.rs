use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("training diverged at iteration {iteration} (loss = {loss})")]
    Divergence { iteration: u64, loss: f64 },

    #[error("IMP round {round}: {source}")]
    RoundFailed {
        round: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("every weight in scope is already pruned")]
    EmptyNetwork,

    #[error("degenerate variance ({variance:e}) in {context}")]
    DegenerateVariance { variance: f64, context: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("class {class} has {count} samples, need at least 2")]
    InsufficientSamples { class: u32, count: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("missing artifact {path}: run `{producer}` first")]
    MissingArtifact { path: PathBuf, producer: String },

    #[error("stale artifact {path}: config hash {found} does not match {expected}")]
    StaleArtifact {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("run directory {0} is locked by another command")]
    Locked(PathBuf),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn degenerate(variance: f64, context: impl Into<String>) -> Self {
        Error::DegenerateVariance {
            variance,
            context: context.into(),
        }
    }

    /// True for divergence, including divergence wrapped in round context.
    pub fn is_divergence(&self) -> bool {
        match self {
            Error::Divergence { .. } => true,
            Error::RoundFailed { source, .. } => source.is_divergence(),
            _ => false,
        }
    }
}
