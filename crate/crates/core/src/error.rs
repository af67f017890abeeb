use thiserror::Error;

use crate::state::DensityMatrix;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("state is not reducible under the {labeling} labeling: {reason}")]
    NotReducible { labeling: String, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("maximum-likelihood reconstruction did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        best: Box<DensityMatrix>,
        log_likelihood_trace: Vec<f64>,
    },

    #[error("incomplete setting coverage: setting {0} is missing")]
    IncompleteCoverage(usize),

    #[error("normalization error: {0}")]
    Normalization(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::NonConvergence { .. } | Error::Validation(_) => 4,
            _ => 3,
        }
    }
}
