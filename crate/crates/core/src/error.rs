//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Tail norm of a latent vector is exactly zero, so the unit direction is
    /// undefined. Probability-zero event; callers are expected to resample.
    #[error("degenerate latent vector at index {0}: zero tail norm")]
    DegenerateLatent(usize),

    /// The dense bit-packed adjacency store is desk-scale only.
    #[error("graph capacity exceeded: n = {n} is above the supported maximum {max}")]
    CapacityExceeded { n: usize, max: usize },

    #[error("calibration failed: {0}")]
    CalibrationFailure(String),

    #[error("non-symmetric input: max |A - A^T| entry = {0}")]
    NotSymmetric(f64),

    #[error("eigensolver did not converge: {0}")]
    NoConvergence(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid coefficients: {0}")]
    InvalidCoefficients(String),

    /// A stage inside a harness trial failed; the sweep records the tag and
    /// keeps going.
    #[error("trial stage '{stage}' failed: {message}")]
    TrialStage { stage: String, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
