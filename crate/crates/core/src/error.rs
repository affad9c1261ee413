use thiserror::Error;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter out of range: {0}")]
    Parameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature did not converge ({context}): partial value {value:.6e}, error estimate {estimate:.3e}")]
    Quadrature {
        context: String,
        value: f64,
        estimate: f64,
    },

    #[error("value {target:.6e} outside achieved range [{lo:.6e}, {hi:.6e}]")]
    Range { target: f64, lo: f64, hi: f64 },

    #[error("taper validation failed: {0}")]
    Taper(String),

    #[error("insufficient resolution: {0}")]
    Resolution(String),

    #[error("series diverged: {0}")]
    Divergence(String),

    #[error("incompatible meshes: {0}")]
    Mesh(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T> = std::result::Result<T, Error>;
