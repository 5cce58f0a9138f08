use thiserror::Error;

/// Errors produced by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not Hermitian (deviation {deviation:.3e} exceeds tolerance {tolerance:.3e})")]
    NotHermitian { deviation: f64, tolerance: f64 },

    #[error("state is not normalized (norm² = {norm_sqr:.12})")]
    NotNormalized { norm_sqr: f64 },

    #[error("density matrix is not valid: {0}")]
    InvalidDensityMatrix(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("outside model validity: {0}")]
    OutOfRegime(String),

    #[error("fit did not converge after {iterations} iterations (best residual norm {residual_norm:.3e}, best parameters {best:?})")]
    FitDidNotConverge {
        iterations: usize,
        residual_norm: f64,
        best: Vec<f64>,
    },

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("incomplete tomography settings; missing Pauli labels: {}", .0.join(", "))]
    IncompleteTomography(Vec<String>),

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
