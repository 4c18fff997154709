//! Rational parameterization of monotone triangular maps.

pub mod link;
pub mod rational;
pub mod theta;
pub mod wavelet;

pub use link::{LinkFunction, LinkSpec};
pub use rational::{
    c1diag_distance, c1diag_norm, natural_parameter, rational_map, ComponentField, FnField,
    PanelQuadrature, PanelRule, PartialPanel, RationalMap, WaveletField,
};
pub use theta::{b_alpha_norm, b_alpha_norm_squared, Theta};
pub use wavelet::{BasisBackend, BasisIndex, BasisScratch, WaveletBasis};
