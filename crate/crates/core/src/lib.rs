//! Transport-based density estimation on the unit cube.
//!
//! Densities are represented as pullbacks of a reference density under
//! lower-triangular monotone maps. The crate provides exact Knothe–Rosenblatt
//! maps for known targets, wavelet-parameterized rational maps fitted by
//! penalized maximum likelihood, divergence metrics and a rate-study harness.

pub mod density;
pub mod error;
pub mod kr;
pub mod map;
pub mod metrics;
pub mod estimator;
pub mod experiment;
pub mod par;
pub mod param;
pub mod quadrature;

pub use density::{make_test_density, DensityField, DensitySpec, FactorizedDensity, Marginal};
pub use error::{Error, Result};
pub use kr::{build_kr, sample_target, KrConfig, KrMap};
pub use map::{invert_triangular, pullback_density, TriangularMap};
pub use par::Execution;
pub use quadrature::{integrate, GridSpec, Rule};
