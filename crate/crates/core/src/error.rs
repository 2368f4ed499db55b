use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, PtnError>;

#[derive(Debug, Error)]
pub enum PtnError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("SVD did not converge for a {rows}x{cols} matrix after {sweeps} sweeps")]
    SvdNonConvergence {
        rows: usize,
        cols: usize,
        sweeps: usize,
    },

    /// A contraction collapsed to exactly zero, so its logarithm is undefined.
    #[error("zero amplitude at position {position}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    ZeroAmplitude {
        position: usize,
        sample: Option<usize>,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("unsupported configuration: {0}")]
    Unsupported(String),

    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl PtnError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PtnError::Io {
            path: path.into(),
            source,
        }
    }

    /// Numerical failures are expected outcomes in the instability experiments
    /// and are reported separately from data or usage errors.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            PtnError::ZeroAmplitude { .. }
                | PtnError::NonFinite(_)
                | PtnError::SvdNonConvergence { .. }
        )
    }

    pub fn is_data(&self) -> bool {
        matches!(
            self,
            PtnError::Parse { .. }
                | PtnError::Data(_)
                | PtnError::Checkpoint(_)
                | PtnError::Io { .. }
        )
    }

    pub(crate) fn with_sample(self, sample: usize) -> Self {
        match self {
            PtnError::ZeroAmplitude { position, .. } => PtnError::ZeroAmplitude {
                position,
                sample: Some(sample),
            },
            other => other,
        }
    }
}
