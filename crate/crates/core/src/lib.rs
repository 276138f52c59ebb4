//! Latent-space random graph laboratory: sampling of a two-community
//! Gaussian mixture threshold graph, threshold calibration, the polynomial
//! basis and expansion coefficients behind its low-rank structure, spectral
//! embedding and clustering, error metrics, and a sweep harness.

pub mod calibrate;
pub mod error;
pub mod gegenbauer;
pub mod graphio;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod special;
pub mod spectral;

pub use error::{Error, Result};
