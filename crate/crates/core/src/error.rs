use std::path::PathBuf;

use crate::numerics::Vector;

/// Errors raised across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    /// An iterate collapsed to the zero vector and could not be normalized.
    /// `trajectory` holds every iterate produced before the collapse.
    #[error("degenerate all-zero iterate at iteration {iteration}")]
    DegenerateIterate { iteration: usize, trajectory: Vec<Vector> },

    #[error("training diverged in round {round}, step {step}: loss = {loss}")]
    Divergence { round: usize, step: usize, loss: f64 },

    #[error("unsupported checkpoint schema version {0}")]
    SchemaVersion(u32),

    #[error("checkpoint checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("missing checkpoint for {0}")]
    MissingCheckpoint(String),

    #[error("failed to access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn ensure_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
