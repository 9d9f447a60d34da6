use std::path::PathBuf;

use crate::optim::TrainingTrace;

/// Errors produced by the mapping and localization pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid covariance: {0}")]
    InvalidCovariance(String),

    #[error("kernel matrix not positive definite after jitter up to {max_jitter:e}")]
    JitterExhausted { max_jitter: f64 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at step {step}: non-finite ELBO")]
    DivergedTraining {
        step: usize,
        trace: Box<TrainingTrace>,
    },

    #[error("all particle weights underflowed to zero")]
    DegenerateWeights,

    #[error("evaluation region contains no cells")]
    EmptyRegion,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("malformed {kind} file {path}: {reason}")]
    Format {
        kind: &'static str,
        path: PathBuf,
        reason: String,
    },

    #[error("config error in {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-readable code, printed as the prefix of CLI errors.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidCovariance(_) => "E_COVARIANCE",
            Error::JitterExhausted { .. } => "E_JITTER",
            Error::EmptyDataset => "E_EMPTY_DATASET",
            Error::DivergedTraining { .. } => "E_DIVERGED",
            Error::DegenerateWeights => "E_DEGENERATE_WEIGHTS",
            Error::EmptyRegion => "E_EMPTY_REGION",
            Error::InvalidArgument(_) => "E_ARGUMENT",
            Error::Format { .. } => "E_FORMAT",
            Error::Config { .. } => "E_CONFIG",
            Error::Io { .. } => "E_IO",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(kind: &'static str, path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            kind,
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
