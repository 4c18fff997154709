//! Triangular maps on `Q_d`: evaluation, coordinate-wise inversion and pullbacks.
//!
//! Components are indexed from zero: `component(k, x)` reads `x[0..=k]`.

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::quadrature::probe_points;
use std::sync::Arc;

/// Largest dimension supported by the fixed-size scratch buffers.
pub const MAX_DIM: usize = 8;

/// A lower-triangular map `S: Q_d -> Q_d` with `S_k` increasing in `x_k`.
pub trait TriangularMap: Send + Sync {
    fn dim(&self) -> usize;

    /// `S_k(x_{0..=k})`.
    fn component(&self, k: usize, x: &[f64]) -> f64;

    /// `∂_k S_k(x_{0..=k})`.
    fn diagonal_partial(&self, k: usize, x: &[f64]) -> f64;

    fn component_and_partial(&self, k: usize, x: &[f64]) -> (f64, f64) {
        (self.component(k, x), self.diagonal_partial(k, x))
    }

    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|k| self.component(k, x)).collect()
    }

    /// `det ∇S(x) = Π_k ∂_k S_k(x)`.
    fn jacobian_determinant(&self, x: &[f64]) -> f64 {
        (0..self.dim()).map(|k| self.diagonal_partial(k, x)).product()
    }
}

impl<M: TriangularMap + ?Sized> TriangularMap for Arc<M> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn component(&self, k: usize, x: &[f64]) -> f64 {
        (**self).component(k, x)
    }
    fn diagonal_partial(&self, k: usize, x: &[f64]) -> f64 {
        (**self).diagonal_partial(k, x)
    }
    fn component_and_partial(&self, k: usize, x: &[f64]) -> (f64, f64) {
        (**self).component_and_partial(k, x)
    }
}

type ComponentFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

/// Triangular map given by closures for components and diagonal partials.
#[derive(Clone)]
pub struct FnMap {
    dim: usize,
    component: ComponentFn,
    partial: ComponentFn,
}

impl FnMap {
    pub fn new(
        dim: usize,
        component: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        partial: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            component: Arc::new(component),
            partial: Arc::new(partial),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(dim, |k, x| x[k], |_, _| 1.0)
    }
}

impl TriangularMap for FnMap {
    fn dim(&self) -> usize {
        self.dim
    }
    fn component(&self, k: usize, x: &[f64]) -> f64 {
        (self.component)(k, x)
    }
    fn diagonal_partial(&self, k: usize, x: &[f64]) -> f64 {
        (self.partial)(k, x)
    }
}

/// Bracket width at which bisection hands over to a Newton polish.
const BISECTION_WIDTH: f64 = 1e-12;

/// Root of the increasing function `f` on `[lo, hi]`.
///
/// Bisection down to a `1e-12` bracket, then one Newton step with `df` that is
/// kept only if it stays inside the bracket.
pub fn solve_monotone(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    lo: f64,
    hi: f64,
) -> Result<f64> {
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    const SLACK: f64 = 1e-10;
    if !(fa.is_finite() && fb.is_finite()) || fa > SLACK || fb < -SLACK {
        return Err(Error::Inversion {
            component: 0,
            reason: format!("root not bracketed: f({a}) = {fa}, f({b}) = {fb}"),
        });
    }
    if fa >= 0.0 {
        return Ok(a);
    }
    if fb <= 0.0 {
        return Ok(b);
    }
    while b - a > BISECTION_WIDTH {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if f(m) < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    let mid = 0.5 * (a + b);
    let d = df(mid);
    if d > 0.0 && d.is_finite() {
        let x = mid - f(mid) / d;
        if x >= a && x <= b {
            return Ok(x);
        }
    }
    Ok(mid)
}

/// Solves `S(x) = z` one coordinate at a time.
pub fn invert_triangular<M: TriangularMap + ?Sized>(map: &M, z: &[f64]) -> Result<Vec<f64>> {
    let d = map.dim();
    if z.len() != d {
        return Err(Error::Input(format!("point has {} coordinates, map has {d}", z.len())));
    }
    if d > MAX_DIM {
        return Err(Error::Input(format!("dimension {d} exceeds {MAX_DIM}")));
    }
    let mut x = vec![0.0; d];
    for k in 0..d {
        let target = z[k];
        let mut base = [0.0; MAX_DIM];
        base[..k].copy_from_slice(&x[..k]);
        let at = |t: f64| {
            let mut p = base;
            p[k] = t;
            p
        };
        let root = solve_monotone(
            |t| map.component(k, &at(t)[..=k]) - target,
            |t| map.diagonal_partial(k, &at(t)[..=k]),
            0.0,
            1.0,
        )
        .map_err(|e| match e {
            Error::Inversion { reason, .. } => Error::Inversion {
                component: k,
                reason,
            },
            e => e,
        })?;
        x[k] = root;
    }
    Ok(x)
}

/// `max_k |S_k(x) - z_k|`.
pub fn residual<M: TriangularMap + ?Sized>(map: &M, x: &[f64], z: &[f64]) -> f64 {
    (0..map.dim())
        .map(|k| (map.component(k, x) - z[k]).abs())
        .fold(0.0, f64::max)
}

/// Probe points per axis used to check monotonicity of a pulled-back map.
const PULLBACK_PROBES: [usize; 4] = [257, 33, 9, 5];

/// Density `x -> η(S(x)) Π_k ∂_k S_k(x)`.
///
/// Returns [`Error::MonotonicityViolation`] if a diagonal partial is not
/// positive at one of the probe points.
pub fn pullback_density<M>(map: Arc<M>, eta: &DensityField) -> Result<DensityField>
where
    M: TriangularMap + 'static + ?Sized,
{
    let d = map.dim();
    if eta.dim() != d {
        return Err(Error::Input(format!(
            "reference has dimension {}, map has {d}",
            eta.dim()
        )));
    }
    let n = PULLBACK_PROBES[(d - 1).min(PULLBACK_PROBES.len() - 1)];
    let mut min_det = f64::INFINITY;
    let mut max_det: f64 = 0.0;
    for x in probe_points(d, n) {
        let mut det = 1.0;
        for k in 0..d {
            let v = map.diagonal_partial(k, &x[..=k]);
            if !(v > 0.0) {
                return Err(Error::MonotonicityViolation {
                    component: k,
                    point: x[..=k].to_vec(),
                    value: v,
                });
            }
            det *= v;
        }
        min_det = min_det.min(det);
        max_det = max_det.max(det);
    }
    let eta_c = eta.clone();
    let lower = eta.lower_bound() * min_det;
    let upper = eta.upper_bound() * max_det;
    Ok(DensityField::new(d, lower, upper, move |x| {
        let mut s = [0.0; MAX_DIM];
        let mut det = 1.0;
        for k in 0..d {
            let (v, p) = map.component_and_partial(k, &x[..=k]);
            s[k] = v;
            det *= p;
        }
        eta_c.eval(&s[..d]) * det
    }))
}
