//! Library surface of the batch front-end, split from the binary so the
//! command implementations are callable from integration tests.

// `!(x > 0.0)` rejects NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod report;

use thiserror::Error;

/// Errors with a stable exit-code contract: 2 for config problems, 3 for a
/// spectral refusal, 4 for non-convergence, 1 for everything else.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    // Messages arriving from the solver already carry their own labels.
    #[error("{0}")]
    Spectral(String),

    #[error("{0}")]
    NonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Spectral(_) => 3,
            CliError::NonConvergence(_) => 4,
            CliError::Io(_) | CliError::Other(_) => 1,
        }
    }
}

impl From<perov_dp::Error> for CliError {
    fn from(e: perov_dp::Error) -> Self {
        match &e {
            perov_dp::Error::SpectralRefusal { .. } => CliError::Spectral(e.to_string()),
            perov_dp::Error::NotConverged { .. } => CliError::NonConvergence(e.to_string()),
            perov_dp::Error::CannotCertify { .. } => CliError::Spectral(e.to_string()),
            _ => CliError::Other(e.to_string()),
        }
    }
}
