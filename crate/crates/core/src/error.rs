use thiserror::Error;

/// Errors raised by model construction, LMI assembly and certificate checks.
///
/// Infeasibility is not an error: analysis and synthesis report it through
/// their verdict types.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("{what} is not symmetric (max asymmetry {asymmetry:.3e})")]
    NotSymmetric { what: String, asymmetry: f64 },

    #[error("{what} is not positive definite (min eigenvalue {min_eig:.3e})")]
    NotPositiveDefinite { what: String, min_eig: f64 },

    #[error("{what} is not positive semidefinite (min eigenvalue {min_eig:.3e})")]
    NotPositiveSemidefinite { what: String, min_eig: f64 },

    #[error("{what} is singular{}", hint.as_ref().map(|h| format!(": {h}")).unwrap_or_default())]
    Singular { what: String, hint: Option<String> },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("certificate refused: {0}")]
    CertificateRefused(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::DimensionMismatch(msg.into()))
}
