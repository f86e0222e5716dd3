use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension out of range: {0}")]
    Dimension(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index {index} out of range for {what} of size {size}")]
    Index {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("tolerance must be positive and finite, got {0}")]
    Tolerance(f64),

    #[error("matrix not symmetric: max asymmetry {found:e} exceeds {tol:e}")]
    NotSymmetric { found: f64, tol: f64 },

    #[error("numerically singular: {0}")]
    Singular(String),

    #[error("CFL violation: {0}")]
    Cfl(String),

    #[error("node not interior: {0}")]
    BoundaryNode(String),

    #[error("empty sample set")]
    EmptySamples,

    #[error("symmetry check rejected: {0}")]
    SymmetryCheck(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
