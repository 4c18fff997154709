//! Distances between densities and between triangular maps, and log-log rate fits.

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::map::{TriangularMap, MAX_DIM};
use crate::par::Execution;
use crate::quadrature::{GridSpec, TensorGrid};
use serde::{Deserialize, Serialize};

/// Below this a density is treated as vanishing in the KL divergence.
pub const KL_FLOOR: f64 = 1e-12;

struct Tabulated {
    p: Vec<f64>,
    q: Vec<f64>,
    w: Vec<f64>,
}

fn tabulate(p: &DensityField, q: &DensityField, grid: &GridSpec) -> Result<Tabulated> {
    if p.dim() != q.dim() {
        return Err(Error::Input(format!(
            "densities have dimensions {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let g: TensorGrid = grid.with_dim(p.dim()).build()?;
    let exec = Execution::default();
    let pv = g.map(exec, &|x: &[f64]| p.eval(x));
    let qv = g.map(exec, &|x: &[f64]| q.eval(x));
    let mut pt = [0.0; MAX_DIM];
    for (i, (a, b)) in pv.iter().zip(&qv).enumerate() {
        if !(a.is_finite() && b.is_finite()) || *a < 0.0 || *b < 0.0 {
            g.point(i, &mut pt[..p.dim()]);
            return Err(Error::Input(format!(
                "density values ({a}, {b}) at {:?} are not nonnegative and finite",
                &pt[..p.dim()]
            )));
        }
    }
    Ok(Tabulated {
        p: pv,
        q: qv,
        w: g.weights(),
    })
}

impl Tabulated {
    fn sum(&self, f: impl Fn(f64, f64) -> f64) -> f64 {
        self.p
            .iter()
            .zip(&self.q)
            .zip(&self.w)
            .map(|((&a, &b), &w)| w * f(a, b))
            .sum()
    }

    fn hellinger(&self) -> f64 {
        self.sum(|a, b| (a.sqrt() - b.sqrt()).powi(2)).max(0.0).sqrt()
    }

    fn l2(&self) -> f64 {
        self.sum(|a, b| (a - b).powi(2)).sqrt()
    }

    fn tv(&self) -> f64 {
        self.sum(|a, b| (a - b).abs())
    }

    fn kl(&self) -> Result<f64> {
        if let Some(v) = self.q.iter().find(|&&v| v < KL_FLOOR) {
            return Err(Error::Domain(format!("second density drops to {v} on the grid")));
        }
        Ok(self
            .sum(|a, b| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
            .max(0.0))
    }
}

/// `h(p, q) = (∫ (√p - √q)²)^{1/2}`.
pub fn hellinger(p: &DensityField, q: &DensityField, grid: &GridSpec) -> Result<f64> {
    Ok(tabulate(p, q, grid)?.hellinger())
}

/// `KL(p ‖ q) = ∫ p log(p / q)`.
pub fn kl_divergence(p: &DensityField, q: &DensityField, grid: &GridSpec) -> Result<f64> {
    tabulate(p, q, grid)?.kl()
}

pub fn l2_distance(p: &DensityField, q: &DensityField, grid: &GridSpec) -> Result<f64> {
    Ok(tabulate(p, q, grid)?.l2())
}

/// `∫ |p - q|`.
pub fn tv_distance(p: &DensityField, q: &DensityField, grid: &GridSpec) -> Result<f64> {
    Ok(tabulate(p, q, grid)?.tv())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub hellinger: f64,
    pub l2: f64,
    pub kl: f64,
    pub tv: f64,
    pub grid: GridSpec,
}

/// All density metrics from one tabulation.
pub fn metrics_report(p: &DensityField, q: &DensityField, grid: &GridSpec) -> Result<MetricsReport> {
    let t = tabulate(p, q, grid)?;
    Ok(MetricsReport {
        hellinger: t.hellinger(),
        l2: t.l2(),
        kl: t.kl()?,
        tv: t.tv(),
        grid: grid.with_dim(p.dim()),
    })
}

/// `(Σ_k ‖S_k - S̃_k‖²_{L²} + ‖∂_k S_k - ∂_k S̃_k‖²_{L²})^{1/2}`.
pub fn h1diag_map_distance<A, B>(s: &A, t: &B, grid: &GridSpec) -> Result<f64>
where
    A: TriangularMap + ?Sized,
    B: TriangularMap + ?Sized,
{
    let d = s.dim();
    if t.dim() != d {
        return Err(Error::Input(format!("maps have dimensions {d} and {}", t.dim())));
    }
    let g = grid.with_dim(d).build()?;
    let total = g.integrate(Execution::default(), &|x: &[f64]| {
        (0..d)
            .map(|k| {
                let (a, da) = s.component_and_partial(k, &x[..=k]);
                let (b, db) = t.component_and_partial(k, &x[..=k]);
                (a - b).powi(2) + (da - db).powi(2)
            })
            .sum::<f64>()
    })?;
    Ok(total.max(0.0).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Least-squares fit of `log(error)` against `log(N)`.
pub fn rate_fit(points: &[(f64, f64)]) -> Result<RateFit> {
    if points.len() < 3 {
        return Err(Error::Input(format!("rate fit needs at least 3 points, got {}", points.len())));
    }
    if let Some(p) = points.iter().find(|(n, e)| !(*n > 0.0) || !(*e > 0.0)) {
        return Err(Error::Input(format!("rate fit needs positive N and error, got {p:?}")));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Input("rate fit needs at least two distinct N".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit {
        slope,
        intercept,
        r2,
    })
}
