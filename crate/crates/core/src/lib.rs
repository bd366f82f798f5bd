//! Spectrally filtered type-II parametric down-conversion as a multimode
//! Gaussian state.
//!
//! The pipeline runs from a sampled joint spectral amplitude through its
//! Schmidt decomposition, frequency-dependent beam-splitter filtering and
//! covariance assembly to EPR squeezing, purity and single-mode character,
//! with two routes to a post-filter measurement basis: a decomposition of the
//! filtered amplitude and a genetic search over orthonormal bases.

pub mod analysis;
pub mod basis_opt;
pub mod covariance;
pub mod error;
pub mod filtering;
pub mod global_opt;
pub mod linalg;
pub mod metrics;
pub mod spectral;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
