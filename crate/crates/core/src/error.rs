use thiserror::Error;

/// Errors raised by the numerical routines of this crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("kernel is singular at (t={t}, s={s})")]
    Singular { t: f64, s: f64 },

    #[error("quadrature did not converge on [{a}, {b}] (error estimate {estimate:e})")]
    Quadrature { a: f64, b: f64, estimate: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("grid size {n} exceeds the supported limit of {limit} cells")]
    GridTooLarge { n: usize, limit: usize },

    #[error("insufficient hits for epsilon values {failed:?} (need at least {min_hits} hits per point)")]
    InsufficientHits { failed: Vec<f64>, min_hits: u64 },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
