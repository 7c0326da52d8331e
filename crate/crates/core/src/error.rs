use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero vector has no normalized expectation")]
    ZeroVector,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("memory time diverges: term {index} has gamma = 0 and omega = 0")]
    DivergentMemoryTime { index: usize },

    #[error("fit did not converge after {iterations} iterations (rms residual {rms:.3e})")]
    FitNotConverged {
        iterations: usize,
        rms: f64,
        best: Vec<f64>,
    },

    #[error("trajectory aborted at t = {t}: {reason}")]
    TrajectoryAborted { t: f64, reason: String },

    #[error("{failed} of {total} trajectories failed (cap is 5%)")]
    TooManyFailures { failed: usize, total: usize },

    #[error("state invariant violated at t = {t}: {what}")]
    InvariantViolation { t: f64, what: String },

    #[error("Fock truncation leakage {leakage:.3e} exceeds 1e-6; increase n_max")]
    TruncationLeakage { leakage: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::DimensionMismatch { .. }
            | Error::ZeroVector
            | Error::InvalidParameter(_)
            | Error::DivergentMemoryTime { .. }
            | Error::Parse { .. } => 2,
            Error::FitNotConverged { .. }
            | Error::TrajectoryAborted { .. }
            | Error::TooManyFailures { .. }
            | Error::InvariantViolation { .. }
            | Error::TruncationLeakage { .. } => 3,
            Error::Io { .. } | Error::Json(_) => 4,
        }
    }
}
