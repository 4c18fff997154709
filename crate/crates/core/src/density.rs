//! Probability densities on the unit cube `Q_k = [0,1]^k`.
//!
//! A [`DensityField`] is an evaluation closure plus its positivity bounds.
//! Reference densities are built from one-dimensional [`Marginal`]s so that
//! their CDFs and inverse CDFs are available coordinate-wise.

use crate::error::{Error, Result};
use crate::quadrature::{GridSpec, TensorGrid};
use crate::par::Execution;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

/// Default lower bound used when choosing synthetic test densities.
pub const DEFAULT_LOWER_BOUND: f64 = 0.25;

/// Normalized one-dimensional density on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Marginal {
    Uniform,
    /// `1 + a(2x - 1)`, so `a = 1/2` gives `x + 1/2`.
    LinearTilt { a: f64 },
    /// `1 + amplitude * cos(2π frequency x)`.
    CosineBump { amplitude: f64, frequency: u32 },
}

impl Marginal {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Marginal::Uniform => Ok(()),
            Marginal::LinearTilt { a } if a.is_finite() && a.abs() < 1.0 => Ok(()),
            Marginal::LinearTilt { a } => Err(Error::Construction(format!(
                "linear tilt a = {a} must satisfy |a| < 1 for positivity"
            ))),
            Marginal::CosineBump {
                amplitude,
                frequency,
            } => {
                if !(amplitude.is_finite() && amplitude.abs() < 1.0) {
                    Err(Error::Construction(format!(
                        "cosine amplitude {amplitude} must satisfy |amplitude| < 1 for positivity"
                    )))
                } else if frequency == 0 {
                    Err(Error::Construction(
                        "cosine frequency must be a positive integer".into(),
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform => 1.0,
            Marginal::LinearTilt { a } => 1.0 + a * (2.0 * x - 1.0),
            Marginal::CosineBump {
                amplitude,
                frequency,
            } => 1.0 + amplitude * (2.0 * PI * frequency as f64 * x).cos(),
        }
    }

    pub fn pdf_derivative(&self, x: f64) -> f64 {
        match *self {
            Marginal::Uniform => 0.0,
            Marginal::LinearTilt { a } => 2.0 * a,
            Marginal::CosineBump {
                amplitude,
                frequency,
            } => {
                let w = 2.0 * PI * frequency as f64;
                -amplitude * w * (w * x).sin()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        match *self {
            Marginal::Uniform => x,
            Marginal::LinearTilt { a } => x + a * (x * x - x),
            Marginal::CosineBump {
                amplitude,
                frequency,
            } => {
                let w = 2.0 * PI * frequency as f64;
                x + amplitude * (w * x).sin() / w
            }
        }
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        match *self {
            Marginal::Uniform => u,
            Marginal::LinearTilt { a } => {
                // a x² + (1 - a) x - u = 0, stable root
                let b = 1.0 - a;
                (2.0 * u / (b + (b * b + 4.0 * a * u).sqrt())).clamp(0.0, 1.0)
            }
            Marginal::CosineBump { .. } => {
                crate::map::solve_monotone(|x| self.cdf(x) - u, |x| self.pdf(x), 0.0, 1.0)
                    .unwrap_or(u)
            }
        }
    }

    pub fn is_uniform(&self) -> bool {
        match *self {
            Marginal::Uniform => true,
            Marginal::LinearTilt { a } => a == 0.0,
            Marginal::CosineBump { amplitude, .. } => amplitude == 0.0,
        }
    }

    pub fn lower_bound(&self) -> f64 {
        match *self {
            Marginal::Uniform => 1.0,
            Marginal::LinearTilt { a } => 1.0 - a.abs(),
            Marginal::CosineBump { amplitude, .. } => 1.0 - amplitude.abs(),
        }
    }

    pub fn upper_bound(&self) -> f64 {
        match *self {
            Marginal::Uniform => 1.0,
            Marginal::LinearTilt { a } => 1.0 + a.abs(),
            Marginal::CosineBump { amplitude, .. } => 1.0 + amplitude.abs(),
        }
    }

    /// Lipschitz constant of the density.
    pub fn lipschitz(&self) -> f64 {
        match *self {
            Marginal::Uniform => 0.0,
            Marginal::LinearTilt { a } => 2.0 * a.abs(),
            Marginal::CosineBump {
                amplitude,
                frequency,
            } => 2.0 * PI * frequency as f64 * amplitude.abs(),
        }
    }
}

/// Product density `Π_k e_k(x_k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorizedDensity {
    marginals: Vec<Marginal>,
}

impl FactorizedDensity {
    pub fn new(marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(Error::Construction("at least one marginal is required".into()));
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { marginals })
    }

    pub fn uniform(dim: usize) -> Self {
        Self {
            marginals: vec![Marginal::Uniform; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    pub fn marginal(&self, k: usize) -> &Marginal {
        &self.marginals[k]
    }

    pub fn is_uniform(&self) -> bool {
        self.marginals.iter().all(Marginal::is_uniform)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut p = 1.0;
        for (m, &xi) in self.marginals.iter().zip(x) {
            p *= m.pdf(xi);
        }
        p
    }

    pub fn lower_bound(&self) -> f64 {
        self.marginals.iter().map(Marginal::lower_bound).product()
    }

    pub fn upper_bound(&self) -> f64 {
        self.marginals.iter().map(Marginal::upper_bound).product()
    }

    /// Maps a point of `Q_d` with independent uniform coordinates to a draw from this density.
    pub fn transform_uniform(&self, u: &[f64]) -> Vec<f64> {
        self.marginals
            .iter()
            .zip(u)
            .map(|(m, &ui)| m.inverse_cdf(ui))
            .collect()
    }

    pub fn to_field(&self) -> DensityField {
        let me = Arc::new(self.clone());
        let inner = me.clone();
        DensityField {
            dim: self.dim(),
            eval: Arc::new(move |x: &[f64]| inner.eval(x)),
            lower: self.lower_bound(),
            upper: self.upper_bound(),
            smoothness: None,
            factors: Some(me),
        }
    }
}

/// Evaluation closure of a density.
pub type DensityFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Density on `Q_dim` with declared bounds `lower <= eval <= upper`.
#[derive(Clone)]
pub struct DensityField {
    dim: usize,
    eval: DensityFn,
    lower: f64,
    upper: f64,
    smoothness: Option<u32>,
    factors: Option<Arc<FactorizedDensity>>,
}

impl fmt::Debug for DensityField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DensityField")
            .field("dim", &self.dim)
            .field("lower", &self.lower)
            .field("upper", &self.upper)
            .field("smoothness", &self.smoothness)
            .field("factorized", &self.factors.is_some())
            .finish()
    }
}

impl DensityField {
    pub fn new(
        dim: usize,
        lower: f64,
        upper: f64,
        eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            eval: Arc::new(eval),
            lower,
            upper,
            smoothness: None,
            factors: None,
        }
    }

    pub fn with_smoothness(mut self, alpha: u32) -> Self {
        self.smoothness = Some(alpha);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower
    }

    pub fn upper_bound(&self) -> f64 {
        self.upper
    }

    pub fn smoothness(&self) -> Option<u32> {
        self.smoothness
    }

    /// Marginal factors when this density is a product density.
    pub fn factorization(&self) -> Option<&FactorizedDensity> {
        self.factors.as_deref()
    }
}

/// Synthetic density families used by tests and experiment configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DensitySpec {
    Uniform,
    /// Identical tilted marginal in every coordinate.
    LinearTilt { a: f64 },
    /// Identical cosine-bump marginal in every coordinate.
    CosineBump { amplitude: f64, frequency: u32 },
    ProductOfMarginals { marginals: Vec<Marginal> },
    /// `1 + s Π_k cos(2π x_k)`, which does not factorize.
    NonproductCoupling { strength: f64 },
}

impl DensitySpec {
    /// Marginal factors, or [`Error::UnsupportedReference`] for non-product kinds.
    pub fn factorized(&self, dim: usize) -> Result<FactorizedDensity> {
        if dim == 0 {
            return Err(Error::Construction("dimension must be at least 1".into()));
        }
        let marginals = match self {
            DensitySpec::Uniform => vec![Marginal::Uniform; dim],
            DensitySpec::LinearTilt { a } => vec![Marginal::LinearTilt { a: *a }; dim],
            DensitySpec::CosineBump {
                amplitude,
                frequency,
            } => vec![
                Marginal::CosineBump {
                    amplitude: *amplitude,
                    frequency: *frequency,
                };
                dim
            ],
            DensitySpec::ProductOfMarginals { marginals } => {
                if marginals.len() != dim {
                    return Err(Error::Construction(format!(
                        "{} marginals given for dimension {dim}",
                        marginals.len()
                    )));
                }
                marginals.clone()
            }
            DensitySpec::NonproductCoupling { .. } => return Err(Error::UnsupportedReference),
        };
        FactorizedDensity::new(marginals)
    }
}

/// Builds a normalized density of the requested family.
pub fn make_test_density(spec: &DensitySpec, dim: usize) -> Result<DensityField> {
    match *spec {
        DensitySpec::NonproductCoupling { strength } => {
            if dim == 0 {
                return Err(Error::Construction("dimension must be at least 1".into()));
            }
            if !(strength.is_finite() && strength.abs() < 1.0) {
                return Err(Error::Construction(format!(
                    "coupling strength {strength} must satisfy |s| < 1 for positivity"
                )));
            }
            Ok(DensityField::new(
                dim,
                1.0 - strength.abs(),
                1.0 + strength.abs(),
                move |x| {
                    let mut c = 1.0;
                    for &xi in x {
                        c *= (2.0 * PI * xi).cos();
                    }
                    1.0 + strength * c
                },
            ))
        }
        _ => Ok(spec.factorized(dim)?.to_field()),
    }
}

/// Bounds and mass of a density observed on a quadrature grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub min: f64,
    pub max: f64,
    pub integral: f64,
    pub violations: Vec<String>,
}

impl ClassReport {
    pub fn is_member(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Integral tolerance for normalized densities at the default grids.
pub fn integral_tolerance(dim: usize) -> f64 {
    if dim <= 1 {
        1e-8
    } else {
        1e-5
    }
}

/// Checks `lower <= p <= upper` on the grid nodes and `|∫p - 1| <= tol`.
pub fn validate_class_membership(p: &DensityField, grid: &GridSpec) -> ClassReport {
    let mut violations = Vec::new();
    let built: Result<TensorGrid> = grid.with_dim(p.dim()).build();
    let g = match built {
        Ok(g) => g,
        Err(e) => {
            return ClassReport {
                min: f64::NAN,
                max: f64::NAN,
                integral: f64::NAN,
                violations: vec![e.to_string()],
            }
        }
    };
    let values = g.map(Execution::default(), &|x: &[f64]| p.eval(x));
    let weights = g.weights();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut integral = 0.0;
    let mut non_finite = 0usize;
    for (v, w) in values.iter().zip(&weights) {
        if !v.is_finite() {
            non_finite += 1;
            continue;
        }
        min = min.min(*v);
        max = max.max(*v);
        integral += v * w;
    }
    if non_finite > 0 {
        violations.push(format!("{non_finite} non-finite values"));
    }
    if min < p.lower_bound() {
        violations.push(format!("minimum {min} below lower bound {}", p.lower_bound()));
    }
    if max > p.upper_bound() {
        violations.push(format!("maximum {max} above upper bound {}", p.upper_bound()));
    }
    let tol = integral_tolerance(p.dim());
    if (integral - 1.0).abs() > tol {
        violations.push(format!("integral {integral} differs from 1 by more than {tol}"));
    }
    ClassReport {
        min,
        max,
        integral,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uniform_is_one() {
        let p = make_test_density(&DensitySpec::Uniform, 2).unwrap();
        assert_eq!(p.eval(&[0.3, 0.9]), 1.0);
        let r = validate_class_membership(&p, &GridSpec::default_for_dim(2));
        assert_eq!((r.min, r.max), (1.0, 1.0));
        assert!((r.integral - 1.0).abs() < 1e-12);
        assert!(r.is_member());
    }

    #[test]
    fn linear_tilt_closed_form() {
        let p = make_test_density(&DensitySpec::LinearTilt { a: 0.5 }, 1).unwrap();
        for x in [0.0, 0.2, 0.5, 1.0] {
            assert!((p.eval(&[x]) - (x + 0.5)).abs() < 1e-15);
        }
        let r = validate_class_membership(&p, &GridSpec::default_for_dim(1));
        assert!((r.min - 0.5).abs() < 1e-15 && (r.max - 1.5).abs() < 1e-15);
        assert!((r.integral - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nonproduct_coupling_normalized() {
        let p = make_test_density(&DensitySpec::NonproductCoupling { strength: 0.5 }, 2).unwrap();
        let v = integrate(|x| p.eval(x), &GridSpec::default_for_dim(2)).unwrap();
        assert!((v - 1.0).abs() < 1e-10);
        assert!(p.factorization().is_none());
    }

    #[test]
    fn unnormalized_is_flagged() {
        let p = DensityField::new(1, 0.5, 3.0, |_| 2.0);
        let r = validate_class_membership(&p, &GridSpec::default_for_dim(1));
        assert!((r.integral - 2.0).abs() < 1e-12);
        assert!(!r.is_member());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(make_test_density(&DensitySpec::LinearTilt { a: 1.0 }, 1).is_err());
        assert!(make_test_density(
            &DensitySpec::CosineBump {
                amplitude: 1.2,
                frequency: 1
            },
            1
        )
        .is_err());
        assert!(make_test_density(&DensitySpec::NonproductCoupling { strength: -1.0 }, 2).is_err());
        assert!(matches!(
            DensitySpec::NonproductCoupling { strength: 0.2 }.factorized(2),
            Err(Error::UnsupportedReference)
        ));
    }

    #[test]
    fn every_family_integrates_to_one() {
        let specs = [
            DensitySpec::Uniform,
            DensitySpec::LinearTilt { a: -0.3 },
            DensitySpec::CosineBump {
                amplitude: 0.6,
                frequency: 2,
            },
            DensitySpec::NonproductCoupling { strength: 0.7 },
        ];
        for spec in &specs {
            for dim in 1..=3 {
                let p = make_test_density(spec, dim).unwrap();
                let r = validate_class_membership(&p, &GridSpec::default_for_dim(dim));
                assert!(r.is_member(), "{spec:?} dim {dim}: {:?}", r.violations);
            }
        }
    }

    #[test]
    fn factorized_eval_is_product_of_marginals() {
        let f = FactorizedDensity::new(vec![
            Marginal::LinearTilt { a: 0.4 },
            Marginal::CosineBump {
                amplitude: 0.3,
                frequency: 3,
            },
            Marginal::Uniform,
        ])
        .unwrap();
        let field = f.to_field();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let prod = f.marginal(0).pdf(x[0]) * f.marginal(1).pdf(x[1]) * f.marginal(2).pdf(x[2]);
            assert_eq!(field.eval(&x).to_bits(), (1.0 * prod).to_bits());
        }
    }

    #[test]
    fn inverse_cdfs_round_trip() {
        for m in [
            Marginal::Uniform,
            Marginal::LinearTilt { a: 0.5 },
            Marginal::LinearTilt { a: -0.7 },
            Marginal::CosineBump {
                amplitude: 0.5,
                frequency: 2,
            },
        ] {
            for i in 0..=20 {
                let u = i as f64 / 20.0;
                assert!((m.cdf(m.inverse_cdf(u)) - u).abs() < 1e-12, "{m:?} {u}");
            }
            let fd = (m.pdf(0.3 + 1e-6) - m.pdf(0.3 - 1e-6)) / 2e-6;
            assert!((fd - m.pdf_derivative(0.3)).abs() < 1e-6);
        }
    }
}
