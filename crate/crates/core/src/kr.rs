//! Exact Knothe–Rosenblatt rearrangement between a target density and a
//! factorized reference on `Q_d`.
//!
//! For a product reference `μ = Π e_k` the `k`-th component reduces to
//! `S_k(x) = G_k^{-1}(F_k(x_k | x_{<k}))`, with `G_k` the CDF of `e_k` and
//! `F_k` the conditional CDF of the target. Conditional CDFs are tabulated on
//! a tensor grid of conditioning points; each table stores the Legendre
//! coefficients of the normalized conditional density on Gauss–Legendre
//! panels so the CDF and its derivative are evaluated consistently.

use crate::density::{DensityField, FactorizedDensity};
use crate::error::{Error, Result};
use crate::map::{solve_monotone, TriangularMap, MAX_DIM};
use crate::par::{self, Execution};
use crate::quadrature::{legendre_all, GaussLegendre, Rule, TensorGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Interpolation across conditioning points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interpolation {
    Linear,
    /// Four-point Lagrange stencil per axis.
    Cubic,
}

/// Resolution of the tabulated oracle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrConfig {
    /// Conditioning points per axis (uniform, endpoints included).
    pub conditioning_points: usize,
    /// Gauss–Legendre panels along the transported coordinate.
    pub panels: usize,
    /// Nodes per panel.
    pub order: usize,
    /// Rule used to integrate out trailing coordinates.
    pub inner: Rule,
    pub interpolation: Interpolation,
}

impl KrConfig {
    pub fn default_for_dim(dim: usize) -> Self {
        Self {
            conditioning_points: match dim {
                0..=2 => 65,
                3 => 33,
                _ => 17,
            },
            panels: 64,
            order: 8,
            inner: Rule::GaussLegendre {
                panels: 8,
                order: 8,
            },
            interpolation: Interpolation::Cubic,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.conditioning_points < 2 || self.panels == 0 || self.order == 0 {
            return Err(Error::Construction(format!("invalid oracle resolution {self:?}")));
        }
        Ok(())
    }
}

/// `x_{0..m} -> ∫ ν(x_{0..m}, y) dy` over the trailing `d - m` coordinates.
#[derive(Clone, Debug)]
pub struct MarginalDensity {
    field: DensityField,
    retained: usize,
    inner: Option<TensorGrid>,
}

impl MarginalDensity {
    pub fn retained(&self) -> usize {
        self.retained
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let m = self.retained;
        let d = self.field.dim();
        match &self.inner {
            None => self.field.eval(&x[..d]),
            Some(grid) if m == 0 => {
                let mut pt = [0.0; MAX_DIM];
                let mut acc = 0.0;
                for i in 0..grid.len() {
                    let w = grid.point(i, &mut pt[..d]);
                    acc += w * self.field.eval(&pt[..d]);
                }
                acc
            }
            Some(grid) => {
                let mut pt = [0.0; MAX_DIM];
                pt[..m].copy_from_slice(&x[..m]);
                let mut acc = 0.0;
                for i in 0..grid.len() {
                    let w = grid.point(i, &mut pt[m..d]);
                    acc += w * self.field.eval(&pt[..d]);
                }
                acc
            }
        }
    }
}

/// Marginal `ν̃_m` keeping the first `m` coordinates (`0 <= m <= d`; `ν̃_0 ≡ 1`).
pub fn marginal_density(nu: &DensityField, m: usize) -> Result<MarginalDensity> {
    marginal_density_with(nu, m, &KrConfig::default_for_dim(nu.dim()).inner)
}

pub fn marginal_density_with(nu: &DensityField, m: usize, inner: &Rule) -> Result<MarginalDensity> {
    let d = nu.dim();
    if m > d {
        return Err(Error::Input(format!("marginal index {m} out of range 0..={d}")));
    }
    if d > MAX_DIM {
        return Err(Error::Input(format!("dimension {d} exceeds {MAX_DIM}")));
    }
    let inner = if m == d {
        None
    } else {
        Some(crate::quadrature::GridSpec::new(d - m, inner.clone())?.build()?)
    };
    Ok(MarginalDensity {
        field: nu.clone(),
        retained: m,
        inner,
    })
}

/// Below this the conditioning marginal is treated as vanishing.
const MARGINAL_FLOOR: f64 = 1e-12;

/// Conditional density `ν_k = ν̃_k / ν̃_{k-1}` of coordinate `k` (1-based) given the previous ones.
#[derive(Clone, Debug)]
pub struct ConditionalDensity {
    numerator: MarginalDensity,
    denominator: MarginalDensity,
}

impl ConditionalDensity {
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let den = self.denominator.eval(x);
        if den < MARGINAL_FLOOR {
            return Err(Error::Construction(format!(
                "conditioning marginal {den} vanishes at {:?}",
                &x[..self.denominator.retained]
            )));
        }
        Ok(self.numerator.eval(x) / den)
    }
}

/// `ν_k` for `1 <= k <= d`.
pub fn conditional_density(nu: &DensityField, k: usize) -> Result<ConditionalDensity> {
    if k == 0 || k > nu.dim() {
        return Err(Error::Input(format!("conditional index {k} out of range 1..={}", nu.dim())));
    }
    Ok(ConditionalDensity {
        numerator: marginal_density(nu, k)?,
        denominator: marginal_density(nu, k - 1)?,
    })
}

/// `F_k(x_k | prefix)` by direct quadrature of the conditional density (1-based `k`).
pub fn conditional_cdf(nu: &DensityField, k: usize, prefix: &[f64], x_k: f64) -> Result<f64> {
    if k == 0 || k > nu.dim() {
        return Err(Error::Input(format!("conditional index {k} out of range 1..={}", nu.dim())));
    }
    if prefix.len() != k - 1 {
        return Err(Error::Input(format!(
            "component {k} needs {} conditioning coordinates, got {}",
            k - 1,
            prefix.len()
        )));
    }
    if !(0.0..=1.0).contains(&x_k) || prefix.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Input("arguments must lie in the unit cube".into()));
    }
    let num = marginal_density(nu, k)?;
    let gl = GaussLegendre::new(8);
    const PANELS: usize = 64;
    let mut pt = [0.0; MAX_DIM];
    pt[..k - 1].copy_from_slice(prefix);
    let mut integrate = |upper: f64| {
        let h = upper / PANELS as f64;
        (0..PANELS)
            .map(|p| {
                gl.integrate(p as f64 * h, (p + 1) as f64 * h, |y| {
                    pt[k - 1] = y;
                    num.eval(&pt[..k])
                })
            })
            .sum::<f64>()
    };
    let total = integrate(1.0);
    if total < MARGINAL_FLOOR {
        return Err(Error::Construction("conditioning marginal vanishes".into()));
    }
    Ok((integrate(x_k) / total).clamp(0.0, 1.0))
}

/// Normalized conditional density on one fibre, stored as per-panel Legendre series.
#[derive(Clone, Debug)]
struct FibreTable {
    coeffs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl FibreTable {
    /// `values[p * order + i]` is the unnormalized density at node `i` of panel `p`.
    fn from_values(values: &[f64], panels: usize, basis: &PanelBasis) -> Result<Self> {
        let q = basis.order;
        let h = 1.0 / panels as f64;
        let mut coeffs = vec![0.0; panels * q];
        let mut masses = Vec::with_capacity(panels);
        for p in 0..panels {
            let v = &values[p * q..(p + 1) * q];
            for n in 0..q {
                let mut c = 0.0;
                for i in 0..q {
                    c += basis.weights[i] * v[i] * basis.legendre_at_nodes[i * q + n];
                }
                coeffs[p * q + n] = c * (2 * n + 1) as f64 / 2.0;
            }
            masses.push(h * coeffs[p * q]);
        }
        let total: f64 = masses.iter().sum();
        if !(total > MARGINAL_FLOOR) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Construction(format!(
                "conditional density has mass {total} on a fibre"
            )));
        }
        coeffs.iter_mut().for_each(|c| *c /= total);
        let mut cumulative = Vec::with_capacity(panels + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for m in &masses[..panels - 1] {
            acc += m / total;
            cumulative.push(acc);
        }
        cumulative.push(1.0);
        Ok(Self { coeffs, cumulative })
    }

    /// CDF and density at `x`.
    #[inline]
    fn eval(&self, x: f64, order: usize) -> (f64, f64) {
        let panels = self.cumulative.len() - 1;
        let t = x.clamp(0.0, 1.0) * panels as f64;
        let p = (t.floor() as usize).min(panels - 1);
        let s = 2.0 * (t - p as f64) - 1.0;
        let mut leg = [0.0; 32];
        let leg = &mut leg[..=order];
        legendre_all(s, leg);
        let c = &self.coeffs[p * order..(p + 1) * order];
        let mut density = 0.0;
        let mut integral = c[0] * (s + 1.0);
        for n in 0..order {
            density += c[n] * leg[n];
            if n >= 1 {
                integral += c[n] * (leg[n + 1] - leg[n - 1]) / (2 * n + 1) as f64;
            }
        }
        let h = 1.0 / panels as f64;
        let cdf = self.cumulative[p] + 0.5 * h * integral;
        (cdf.clamp(0.0, 1.0), density)
    }
}

#[derive(Clone, Debug)]
struct PanelBasis {
    order: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    legendre_at_nodes: Vec<f64>,
}

impl PanelBasis {
    fn new(order: usize) -> Result<Self> {
        if order > 30 {
            return Err(Error::Construction("panel order above 30 is not supported".into()));
        }
        let gl = GaussLegendre::new(order);
        let mut legendre_at_nodes = vec![0.0; order * order];
        for (i, &s) in gl.nodes().iter().enumerate() {
            legendre_all(s, &mut legendre_at_nodes[i * order..(i + 1) * order]);
        }
        Ok(Self {
            order,
            nodes: gl.nodes().to_vec(),
            weights: gl.weights().to_vec(),
            legendre_at_nodes,
        })
    }

    fn fibre_nodes(&self, panels: usize) -> Vec<f64> {
        let h = 1.0 / panels as f64;
        (0..panels)
            .flat_map(|p| {
                self.nodes
                    .iter()
                    .map(move |s| (p as f64 + 0.5 * (s + 1.0)) * h)
            })
            .collect()
    }
}

/// Interpolation stencil along one conditioning axis.
#[derive(Clone, Copy, Debug)]
struct Stencil {
    start: usize,
    len: usize,
    weights: [f64; 4],
}

fn stencil(u: f64, points: usize, interp: Interpolation) -> Stencil {
    let h = 1.0 / (points - 1) as f64;
    let t = u.clamp(0.0, 1.0) / h;
    let cell = (t.floor() as usize).min(points - 2);
    if interp == Interpolation::Linear || points < 4 {
        let f = t - cell as f64;
        return Stencil {
            start: cell,
            len: 2,
            weights: [1.0 - f, f, 0.0, 0.0],
        };
    }
    let start = cell.saturating_sub(1).min(points - 4);
    let mut weights = [0.0; 4];
    for (j, w) in weights.iter_mut().enumerate() {
        let xj = (start + j) as f64;
        let mut l = 1.0;
        for m in 0..4 {
            if m != j {
                let xm = (start + m) as f64;
                l *= (t - xm) / (xj - xm);
            }
        }
        *w = l;
    }
    Stencil {
        start,
        len: 4,
        weights,
    }
}

/// Tabulated conditional CDFs of one component.
#[derive(Clone, Debug)]
struct ComponentTable {
    /// Number of conditioning coordinates (the component index).
    conditioning: usize,
    fibres: Vec<FibreTable>,
}

/// Exact KR rearrangement `S_{ν,μ}` for a factorized reference `μ`.
#[derive(Clone, Debug)]
pub struct KrMap {
    dim: usize,
    reference: FactorizedDensity,
    config: KrConfig,
    components: Vec<ComponentTable>,
}

/// Builds `S_{ν,μ}` with the default resolution for `ν`'s dimension.
pub fn build_kr(nu: &DensityField, mu: &DensityField) -> Result<KrMap> {
    build_kr_with(nu, mu, &KrConfig::default_for_dim(nu.dim()))
}

pub fn build_kr_with(nu: &DensityField, mu: &DensityField, config: &KrConfig) -> Result<KrMap> {
    let reference = mu
        .factorization()
        .cloned()
        .ok_or(Error::UnsupportedReference)?;
    KrMap::build(nu, reference, config)
}

impl KrMap {
    pub fn build(nu: &DensityField, reference: FactorizedDensity, config: &KrConfig) -> Result<Self> {
        config.validate()?;
        let d = nu.dim();
        if reference.dim() != d {
            return Err(Error::Input(format!(
                "reference dimension {} differs from target dimension {d}",
                reference.dim()
            )));
        }
        if d == 0 || d > MAX_DIM {
            return Err(Error::Input(format!("unsupported dimension {d}")));
        }
        if !(nu.lower_bound() > 0.0) {
            return Err(Error::Construction("target density must be lower-bounded".into()));
        }
        let basis = PanelBasis::new(config.order)?;
        let fibre_nodes = basis.fibre_nodes(config.panels);
        let g = config.conditioning_points;
        let mut components = Vec::with_capacity(d);
        for k in 0..d {
            let marginal = marginal_density_with(nu, k + 1, &config.inner)?;
            let count = g.pow(k as u32);
            let tables = par::map_items(Execution::default(), (0..count).collect(), |idx| {
                let mut pt = [0.0; MAX_DIM];
                let mut rest = idx;
                for a in (0..k).rev() {
                    pt[a] = (rest % g) as f64 / (g - 1) as f64;
                    rest /= g;
                }
                let values: Vec<f64> = fibre_nodes
                    .iter()
                    .map(|&y| {
                        pt[k] = y;
                        marginal.eval(&pt[..=k])
                    })
                    .collect();
                FibreTable::from_values(&values, config.panels, &basis)
            });
            let fibres = tables.into_iter().collect::<Result<Vec<_>>>()?;
            components.push(ComponentTable {
                conditioning: k,
                fibres,
            });
        }
        Ok(Self {
            dim: d,
            reference,
            config: config.clone(),
            components,
        })
    }

    pub fn reference(&self) -> &FactorizedDensity {
        &self.reference
    }

    pub fn config(&self) -> &KrConfig {
        &self.config
    }

    /// Interpolated conditional CDF `F_k(x_k | x_{<k})` and density.
    pub fn conditional(&self, k: usize, x: &[f64]) -> (f64, f64) {
        let table = &self.components[k];
        let order = self.config.order;
        let xk = x[k];
        if table.conditioning == 0 {
            return table.fibres[0].eval(xk, order);
        }
        let g = self.config.conditioning_points;
        let mut stencils = [Stencil {
            start: 0,
            len: 0,
            weights: [0.0; 4],
        }; MAX_DIM];
        for (a, st) in stencils.iter_mut().enumerate().take(k) {
            *st = stencil(x[a], g, self.config.interpolation);
        }
        let combos: usize = stencils[..k].iter().map(|s| s.len).product();
        let mut cdf = 0.0;
        let mut density = 0.0;
        for c in 0..combos {
            let mut rest = c;
            let mut w = 1.0;
            let mut idx = 0;
            for st in &stencils[..k] {
                let j = rest % st.len;
                rest /= st.len;
                w *= st.weights[j];
                idx = idx * g + st.start + j;
            }
            let (f, rho) = table.fibres[idx].eval(xk, order);
            cdf += w * f;
            density += w * rho;
        }
        (cdf, density)
    }

    /// `S^{-1}(z)`.
    pub fn invert(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim {
            return Err(Error::Input(format!(
                "point has {} coordinates, map has {}",
                z.len(),
                self.dim
            )));
        }
        let levels: Vec<f64> = z
            .iter()
            .zip(self.reference.marginals())
            .map(|(&zk, m)| m.cdf(zk))
            .collect();
        self.invert_levels(&levels)
    }

    /// Solves `F_k(x_k | x_{<k}) = u_k` for every `k`.
    fn invert_levels(&self, levels: &[f64]) -> Result<Vec<f64>> {
        let mut x = [0.0; MAX_DIM];
        for k in 0..self.dim {
            let u = levels[k];
            let base = x;
            let at = |t: f64| {
                let mut p = base;
                p[k] = t;
                p
            };
            x[k] = solve_monotone(
                |t| self.conditional(k, &at(t)).0 - u,
                |t| self.conditional(k, &at(t)).1,
                0.0,
                1.0,
            )
            .map_err(|e| match e {
                Error::Inversion { reason, .. } => Error::Inversion {
                    component: k,
                    reason: format!("{reason} (level {u})"),
                },
                e => e,
            })?;
        }
        Ok(x[..self.dim].to_vec())
    }

    /// Smallest diagonal partial over `points`.
    pub fn monotonicity_min(&self, points: &[Vec<f64>]) -> f64 {
        points
            .iter()
            .flat_map(|x| (0..self.dim).map(move |k| (k, x)))
            .map(|(k, x)| self.diagonal_partial(k, x))
            .fold(f64::INFINITY, f64::min)
    }
}

impl TriangularMap for KrMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn component(&self, k: usize, x: &[f64]) -> f64 {
        let (f, _) = self.conditional(k, x);
        self.reference.marginal(k).inverse_cdf(f)
    }

    fn diagonal_partial(&self, k: usize, x: &[f64]) -> f64 {
        self.component_and_partial(k, x).1
    }

    fn component_and_partial(&self, k: usize, x: &[f64]) -> (f64, f64) {
        let (f, rho) = self.conditional(k, x);
        let e = self.reference.marginal(k);
        let s = e.inverse_cdf(f);
        (s, rho / e.pdf(s))
    }
}

/// Samples per block of parallel inversion work.
const SAMPLE_BLOCK: usize = 256;

/// Draws `n` points from the target of `kr` by inverse-Rosenblatt sampling.
///
/// Uniform levels are drawn sequentially from a ChaCha stream seeded with
/// `seed`, then inverted block-wise, so the output depends only on `(kr, n, seed)`.
pub fn sample_target(kr: &KrMap, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let d = kr.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let levels: Vec<f64> = (0..n * d).map(|_| rng.gen::<f64>()).collect();
    let blocks = par::map_blocks(Execution::default(), n, SAMPLE_BLOCK, |r| {
        r.map(|i| kr.invert_levels(&levels[i * d..(i + 1) * d]))
            .collect::<Result<Vec<_>>>()
    });
    let mut out = Vec::with_capacity(n);
    for b in blocks {
        out.extend(b?);
    }
    Ok(out)
}

/// Writes one point per row with 17 significant digits.
pub fn write_points_csv(points: &[Vec<f64>], out: &mut impl Write) -> std::io::Result<()> {
    for p in points {
        let row: Vec<String> = p.iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn save_points_csv(points: &[Vec<f64>], path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    write_points_csv(points, &mut f).map_err(io)?;
    f.flush().map_err(io)
}
