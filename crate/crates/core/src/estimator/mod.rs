//! Penalized maximum-likelihood estimation of rational triangular maps.

mod lbfgs;
mod objective;

pub use lbfgs::{minimize, OptimizerConfig, Outcome};
pub use objective::{Problem, BOUNDARY_NUDGE};

use crate::density::{DensityField, FactorizedDensity};
use crate::error::{Error, Result};
use crate::map::pullback_density;
use crate::metrics::hellinger;
use crate::par::Execution;
use crate::param::{b_alpha_norm_squared, rational_map, BasisBackend, LinkSpec, Theta};
use crate::quadrature::GridSpec;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Debug)]
pub struct FitConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub max_level: usize,
    pub link: LinkSpec,
    pub basis: BasisBackend,
    pub optimizer: OptimizerConfig,
    /// Starting point; zero (the identity map) when absent.
    pub initial_theta: Option<Theta>,
    pub execution: Execution,
}

impl FitConfig {
    /// Config with the schedule's `λ` and `J` for `n` samples.
    pub fn scheduled(n: usize, alpha: f64, dim: usize) -> Result<Self> {
        let s = tuning_schedule(n, alpha, dim)?;
        Ok(Self {
            alpha,
            lambda: s.lambda,
            max_level: s.j,
            link: LinkSpec::default(),
            basis: BasisBackend::Haar,
            optimizer: OptimizerConfig::default(),
            initial_theta: None,
            execution: Execution::default(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        if !(self.optimizer.gradient_tolerance > 0.0) {
            return Err(Error::Config("gradient_tolerance must be positive".into()));
        }
        self.link.build().map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm_final: f64,
    pub objective_trace: Vec<f64>,
}

impl FitResult {
    pub fn to_json(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({
            "theta_hat": self.theta_hat.to_json()?,
            "objective_value": self.objective_value,
            "iterations": self.iterations,
            "converged": self.converged,
            "gradient_norm_final": self.gradient_norm_final,
            "objective_trace": self.objective_trace,
        }))
    }
}

fn problem(data: &[Vec<f64>], reference: &FactorizedDensity, config: &FitConfig, shape: &Theta) -> Result<Problem> {
    Problem::new(
        data,
        reference,
        config.link.build()?,
        shape,
        config.lambda,
        config.alpha,
        config.execution,
    )
}

fn shape_for(dim: usize, config: &FitConfig) -> Result<Theta> {
    match &config.initial_theta {
        Some(t) => {
            if t.dim() != dim || t.backend != config.basis || t.max_level != config.max_level {
                return Err(Error::Config("initial theta does not match the fit configuration".into()));
            }
            Ok(t.clone())
        }
        None => Theta::zeros(dim, config.basis, config.max_level, config.alpha),
    }
}

/// Penalized maximum-likelihood fit started from `config.initial_theta`.
///
/// Running out of iterations is reported through `converged`, not as an error.
pub fn fit(data: &[Vec<f64>], reference: &FactorizedDensity, config: &FitConfig) -> Result<FitResult> {
    config.validate()?;
    let start = shape_for(reference.dim(), config)?;
    let prob = problem(data, reference, config, &start)?;
    let out = minimize(|x| prob.objective_and_gradient(x), start.to_flat(), &config.optimizer);
    if !out.value.is_finite() {
        return Err(Error::NonFinite {
            point: Vec::new(),
            value: out.value,
        });
    }
    let mut theta_hat = prob.theta_from_flat(&out.x);
    theta_hat.alpha = config.alpha;
    Ok(FitResult {
        theta_hat,
        objective_value: out.value,
        iterations: out.iterations,
        converged: out.converged,
        gradient_norm_final: out.gradient_inf,
        objective_trace: out.trace,
    })
}

fn problem_for(theta: &Theta, data: &[Vec<f64>], reference: &FactorizedDensity, link: &LinkSpec, lambda: f64) -> Result<Problem> {
    Problem::new(data, reference, link.build()?, theta, lambda, theta.alpha, Execution::default())
}

/// `-(1/N) Σ_i log S_θ^#η(X_i)`.
pub fn negative_log_likelihood(theta: &Theta, data: &[Vec<f64>], reference: &FactorizedDensity, link: &LinkSpec) -> Result<f64> {
    Ok(problem_for(theta, data, reference, link, 0.0)?.negative_log_likelihood(&theta.to_flat()))
}

/// Negative log-likelihood plus `λ² ‖θ‖²_{b^α_22}` (with `α = theta.alpha`).
pub fn objective(theta: &Theta, data: &[Vec<f64>], reference: &FactorizedDensity, link: &LinkSpec, lambda: f64) -> Result<f64> {
    Ok(problem_for(theta, data, reference, link, lambda)?.objective(&theta.to_flat()))
}

/// Gradient of [`objective`] in the shape of `theta`.
pub fn gradient(theta: &Theta, data: &[Vec<f64>], reference: &FactorizedDensity, link: &LinkSpec, lambda: f64) -> Result<Theta> {
    let p = problem_for(theta, data, reference, link, lambda)?;
    Ok(theta.with_flat(&p.objective_and_gradient(&theta.to_flat()).1))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lambda: f64,
    #[serde(rename = "J")]
    pub j: usize,
}

/// `λ = N^{-α/(2α+d)}` and the smallest `J` with `2^J >= N^{1/(2α+d)}`.
pub fn tuning_schedule(n: usize, alpha: f64, dim: usize) -> Result<Schedule> {
    if n == 0 {
        return Err(Error::Input("schedule needs N >= 1".into()));
    }
    if !(alpha > 0.0) || dim == 0 {
        return Err(Error::Input(format!("schedule needs alpha > 0 and d >= 1, got ({alpha}, {dim})")));
    }
    let denom = 2.0 * alpha + dim as f64;
    let log_n = (n as f64).log2();
    let lambda = (-(log_n * alpha) / denom).exp2();
    let j = (log_n / denom - 1e-9).ceil().max(0.0) as usize;
    Ok(Schedule { lambda, j })
}

/// `h²(S_θ^#η, p) + λ² ‖θ‖²_{b^α_22}`.
pub fn tau_squared(
    theta: &Theta,
    truth: &DensityField,
    reference: &FactorizedDensity,
    link: &LinkSpec,
    lambda: f64,
    alpha: f64,
    grid: &GridSpec,
) -> Result<f64> {
    let map = Arc::new(rational_map(theta.clone(), link.build()?)?);
    let fitted = pullback_density(map, &reference.to_field())?;
    let h = hellinger(&fitted, truth, grid)?;
    Ok(h * h + lambda * lambda * b_alpha_norm_squared(theta, alpha))
}
