//! Error types shared across the library.

use thiserror::Error;

use crate::mdp::SolveReport;
use crate::spectral::SpectralCertificate;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or non-finite input data.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The model definition itself is inconsistent (empty action set,
    /// non-finite reward at a feasible action, ...).
    #[error("model error: {0}")]
    Model(String),

    /// A documented precondition of an operation does not hold.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The coefficient matrix could not be certified as a contraction;
    /// the certificate documents why.
    #[error("spectral refusal: radius {:.6} (bounds [{:.6}, {:.6}]) is not conclusively below 1",
            .certificate.radius, .certificate.lower_bound, .certificate.upper_bound)]
    SpectralRefusal {
        certificate: Box<SpectralCertificate>,
    },

    /// Iteration budget exhausted before the a-posteriori bound met the
    /// tolerance. No fixed point is claimed; the report carries the trace.
    #[error("no convergence after {} iterations (a-posteriori bound {:.3e} > tol {:.3e})",
            .report.iterations, .report.aposteriori_sup(), .report.requested_tol)]
    NotConverged { report: Box<SolveReport> },

    /// A certification hypothesis fails, e.g. the weight-offset search
    /// requires the base coefficient matrix to be a strict contraction.
    #[error("cannot certify: spectral radius {radius:.6} must be below {required:.6}")]
    CannotCertify { radius: f64, required: f64 },

    #[error("internal error: {0}")]
    Internal(String),
}
