//! Rational triangular maps `S_{F,k} = ∫_0^{x_k} Φ(F_k) / ∫_0^1 Φ(F_k)`.

use super::link::LinkFunction;
use super::theta::Theta;
use super::wavelet::{BasisBackend, BasisScratch, WaveletBasis};
use crate::error::{Error, Result};
use crate::map::{TriangularMap, MAX_DIM};
use crate::quadrature::GaussLegendre;
use std::cell::RefCell;
use std::sync::{Arc, OnceLock};

/// How `∫_a^x` is approximated on the panel `[a, b]` containing `x`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PartialPanel {
    /// The Gauss–Legendre rule mapped to `[a, x]`.
    #[default]
    Gauss,
    /// The weights split `[a, b]` into cells, one per node; the integrand is
    /// held at the node value on its cell. Strictly increasing in `x`.
    Cells,
}

/// Composite Gauss–Legendre rule along the transported coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PanelRule {
    pub panels: usize,
    pub order: usize,
    pub partial: PartialPanel,
}

impl PanelRule {
    /// Panels at the finest dyadic breakpoints of a level-`J` basis. Haar
    /// integrands are constant on each panel, so one node suffices.
    pub fn for_basis(backend: BasisBackend, max_level: usize) -> Self {
        Self {
            panels: 1 << (max_level + 1),
            order: match backend {
                BasisBackend::Haar => 1,
                BasisBackend::Daubechies4 => 8,
            },
            // D4 fibres are rough, and a moving Gauss rule on [a, x] can
            // then decrease in x
            partial: match backend {
                BasisBackend::Haar => PartialPanel::Gauss,
                BasisBackend::Daubechies4 => PartialPanel::Cells,
            },
        }
    }
}

impl Default for PanelRule {
    fn default() -> Self {
        Self {
            panels: 64,
            order: 8,
            partial: PartialPanel::Gauss,
        }
    }
}

/// Nodes and weights of a [`PanelRule`] with helpers for partial panels.
#[derive(Clone, Debug)]
pub struct PanelQuadrature {
    rule: PanelRule,
    ref_nodes: Vec<f64>,
    ref_weights: Vec<f64>,
    /// Left cell edges on `[-1, 1]`.
    ref_cells: Vec<f64>,
}

impl PanelQuadrature {
    pub fn new(rule: PanelRule) -> Result<Self> {
        if rule.panels == 0 || rule.order == 0 {
            return Err(Error::Config(format!("invalid panel rule {rule:?}")));
        }
        let gl = GaussLegendre::new(rule.order);
        let ref_cells = gl
            .weights()
            .iter()
            .scan(-1.0, |edge, w| {
                let left = *edge;
                *edge += w;
                Some(left)
            })
            .collect();
        Ok(Self {
            rule,
            ref_nodes: gl.nodes().to_vec(),
            ref_weights: gl.weights().to_vec(),
            ref_cells,
        })
    }

    pub fn rule(&self) -> PanelRule {
        self.rule
    }

    pub fn panels(&self) -> usize {
        self.rule.panels
    }

    pub fn order(&self) -> usize {
        self.rule.order
    }

    pub fn width(&self) -> f64 {
        1.0 / self.rule.panels as f64
    }

    /// Panel containing `x`, with `x = 1` in the last one.
    #[inline]
    pub fn panel_of(&self, x: f64) -> usize {
        ((x * self.rule.panels as f64).floor() as usize).min(self.rule.panels - 1)
    }

    /// Nodes and weights of the rule mapped to `[a, b]`.
    #[inline]
    pub fn nodes_on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        self.ref_nodes
            .iter()
            .zip(&self.ref_weights)
            .map(move |(s, w)| (a + half * (s + 1.0), w * half))
    }

    /// Nodes and weights for `∫_a^x` where `a` is the left edge of the panel of `x`.
    #[inline]
    pub fn partial_nodes(&self, x: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let (a, b) = self.panel_bounds(self.panel_of(x));
        let cells = self.rule.partial == PartialPanel::Cells;
        let half = 0.5 * if cells { b - a } else { x - a };
        let t = (x - a) / half - 1.0;
        self.ref_nodes
            .iter()
            .zip(&self.ref_weights)
            .zip(&self.ref_cells)
            .map(move |((s, w), c)| {
                let w = if cells { (t - c).clamp(0.0, *w) } else { *w };
                (a + half * (s + 1.0), w * half)
            })
            .filter(|&(_, w)| w > 0.0)
    }

    #[inline]
    pub fn panel_bounds(&self, p: usize) -> (f64, f64) {
        let h = self.width();
        (p as f64 * h, (p + 1) as f64 * h)
    }

    /// All full-panel nodes in panel order.
    pub fn all_nodes(&self) -> Vec<(f64, f64)> {
        (0..self.rule.panels)
            .flat_map(|p| {
                let (a, b) = self.panel_bounds(p);
                self.nodes_on(a, b).collect::<Vec<_>>()
            })
            .collect()
    }
}

type Fibre<'a> = Box<dyn FnMut(f64) -> f64 + 'a>;

/// The functions `F_k: Q_k -> R` that drive a rational map.
pub trait ComponentField: Send + Sync {
    fn dim(&self) -> usize;

    /// `F_k(x_{0..=k})` (0-based `k`).
    fn eval(&self, k: usize, x: &[f64]) -> f64;

    /// `y -> F_k(prefix, y)`.
    fn fibre<'a>(&'a self, k: usize, prefix: &[f64]) -> Fibre<'a> {
        let mut p = [0.0; MAX_DIM];
        p[..k].copy_from_slice(&prefix[..k]);
        Box::new(move |y| {
            p[k] = y;
            self.eval(k, &p[..=k])
        })
    }

    /// Quadrature suited to the field's breakpoints.
    fn default_rule(&self) -> PanelRule {
        PanelRule::default()
    }
}

/// `F_{θ,k} = Σ θ^k_{lm} ψ^k_{lm}`.
#[derive(Clone, Debug)]
pub struct WaveletField {
    theta: Theta,
    bases: Vec<WaveletBasis>,
}

thread_local! {
    static SCRATCH: RefCell<BasisScratch> = RefCell::new(BasisScratch::default());
}

impl WaveletField {
    pub fn new(theta: Theta) -> Result<Self> {
        let bases = theta.bases()?;
        for (b, c) in bases.iter().zip(&theta.components) {
            if b.len() != c.len() {
                return Err(Error::Input(format!(
                    "component {} has {} coefficients, basis has {}",
                    b.kdim(),
                    c.len(),
                    b.len()
                )));
            }
        }
        Ok(Self { theta, bases })
    }

    pub fn theta(&self) -> &Theta {
        &self.theta
    }

    pub fn bases(&self) -> &[WaveletBasis] {
        &self.bases
    }

    /// Coefficients of the one-dimensional expansion on the fibre through `prefix`.
    pub fn reduced(&self, k: usize, prefix: &[f64], scratch: &mut BasisScratch) -> Vec<f64> {
        let b = &self.bases[k];
        let theta = &self.theta.components[k];
        let mut c = vec![0.0; b.reduced_len()];
        b.for_each_on_fibre(prefix, scratch, |j, r, w| c[r] += w * theta[j]);
        c
    }
}

impl ComponentField for WaveletField {
    fn dim(&self) -> usize {
        self.bases.len()
    }

    fn eval(&self, k: usize, x: &[f64]) -> f64 {
        SCRATCH.with(|s| self.bases[k].expand(&self.theta.components[k], x, &mut s.borrow_mut()))
    }

    fn fibre<'a>(&'a self, k: usize, prefix: &[f64]) -> Fibre<'a> {
        let mut scratch = BasisScratch::default();
        let c = self.reduced(k, prefix, &mut scratch);
        let b = &self.bases[k];
        let mut act = Vec::new();
        Box::new(move |y| {
            b.reduced_active(y, &mut scratch, &mut act);
            act.iter().map(|&(r, v)| c[r] * v).sum()
        })
    }

    fn default_rule(&self) -> PanelRule {
        PanelRule::for_basis(self.theta.backend, self.theta.max_level)
    }
}

type FieldFn = Arc<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>;

/// Field given by a closure.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    f: FieldFn,
    rule: PanelRule,
}

impl std::fmt::Debug for FnField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnField").field("dim", &self.dim).finish_non_exhaustive()
    }
}

impl FnField {
    pub fn new(dim: usize, f: impl Fn(usize, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            f: Arc::new(f),
            rule: PanelRule::default(),
        }
    }

    pub fn with_rule(mut self, rule: PanelRule) -> Self {
        self.rule = rule;
        self
    }
}

impl ComponentField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, k: usize, x: &[f64]) -> f64 {
        (self.f)(k, x)
    }
    fn default_rule(&self) -> PanelRule {
        self.rule
    }
}

/// Cumulative panel integrals of `Φ(F_0)`, which do not depend on any prefix.
#[derive(Debug)]
struct FirstComponent {
    cumulative: Vec<f64>,
}

/// The triangular map `S_F` induced by a field and a link.
pub struct RationalMap<F> {
    field: F,
    link: LinkFunction,
    quad: PanelQuadrature,
    first: OnceLock<FirstComponent>,
}

impl<F: std::fmt::Debug> std::fmt::Debug for RationalMap<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RationalMap")
            .field("field", &self.field)
            .field("link", &self.link)
            .field("rule", &self.quad.rule())
            .finish()
    }
}

impl<F: ComponentField> RationalMap<F> {
    pub fn new(field: F, link: LinkFunction) -> Result<Self> {
        let rule = field.default_rule();
        Self::with_rule(field, link, rule)
    }

    pub fn with_rule(field: F, link: LinkFunction, rule: PanelRule) -> Result<Self> {
        if field.dim() == 0 || field.dim() > MAX_DIM {
            return Err(Error::Input(format!("unsupported dimension {}", field.dim())));
        }
        Ok(Self {
            field,
            link,
            quad: PanelQuadrature::new(rule)?,
            first: OnceLock::new(),
        })
    }

    pub fn field(&self) -> &F {
        &self.field
    }

    pub fn link(&self) -> &LinkFunction {
        &self.link
    }

    pub fn rule(&self) -> PanelRule {
        self.quad.rule()
    }

    fn panel_integral(&self, g: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> f64 {
        self.quad.nodes_on(a, b).map(|(y, w)| w * self.link.phi(g(y))).sum()
    }

    fn partial_integral(&self, g: &mut dyn FnMut(f64) -> f64, x: f64) -> f64 {
        self.quad.partial_nodes(x).map(|(y, w)| w * self.link.phi(g(y))).sum()
    }

    fn first(&self) -> &FirstComponent {
        self.first.get_or_init(|| {
            let mut g = self.field.fibre(0, &[]);
            let mut cumulative = vec![0.0];
            let mut acc = 0.0;
            for p in 0..self.quad.panels() {
                let (a, b) = self.quad.panel_bounds(p);
                acc += self.panel_integral(&mut g, a, b);
                cumulative.push(acc);
            }
            FirstComponent { cumulative }
        })
    }

    /// `(∫_0^{x_k} Φ(F_k), ∫_0^1 Φ(F_k))` with the fibre through `x_{<k}`.
    pub fn integrals(&self, k: usize, x: &[f64]) -> (f64, f64) {
        let xk = x[k].clamp(0.0, 1.0);
        let p = self.quad.panel_of(xk);
        if k == 0 {
            let first = self.first();
            let mut g = self.field.fibre(0, &[]);
            let num = first.cumulative[p] + self.partial_integral(&mut g, xk);
            return (num, first.cumulative[self.quad.panels()]);
        }
        let mut g = self.field.fibre(k, &x[..k]);
        let mut below = 0.0;
        let mut total = 0.0;
        for q in 0..self.quad.panels() {
            if q == p {
                below = total;
            }
            let (lo, hi) = self.quad.panel_bounds(q);
            total += self.panel_integral(&mut g, lo, hi);
        }
        (below + self.partial_integral(&mut g, xk), total)
    }
}

impl<F: ComponentField> TriangularMap for RationalMap<F> {
    fn dim(&self) -> usize {
        self.field.dim()
    }

    fn component(&self, k: usize, x: &[f64]) -> f64 {
        let (num, z) = self.integrals(k, x);
        (num / z).clamp(0.0, 1.0)
    }

    fn diagonal_partial(&self, k: usize, x: &[f64]) -> f64 {
        let z = if k == 0 {
            self.first().cumulative[self.quad.panels()]
        } else {
            self.integrals(k, x).1
        };
        self.link.phi(self.field.eval(k, x)) / z
    }

    fn component_and_partial(&self, k: usize, x: &[f64]) -> (f64, f64) {
        let (num, z) = self.integrals(k, x);
        (
            (num / z).clamp(0.0, 1.0),
            self.link.phi(self.field.eval(k, x)) / z,
        )
    }
}

/// `S_θ` for a coefficient set.
pub fn rational_map(theta: Theta, link: LinkFunction) -> Result<RationalMap<WaveletField>> {
    RationalMap::new(WaveletField::new(theta)?, link)
}

/// Probe points per axis used to check that diagonal partials fit the link range.
const NATURAL_PROBES: [usize; 4] = [257, 65, 17, 9];

/// `F^♮_k = Φ^{-1}(∂_k S_k)`.
///
/// Fails with [`Error::LinkRange`] if a diagonal partial on the probe grid
/// falls outside `(K_min, K_max)`.
pub fn natural_parameter<M>(map: Arc<M>, link: LinkFunction) -> Result<FnField>
where
    M: TriangularMap + ?Sized + 'static,
{
    let d = map.dim();
    let n = NATURAL_PROBES[(d.max(1) - 1).min(NATURAL_PROBES.len() - 1)];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in crate::quadrature::probe_points(d, n) {
        for k in 0..d {
            let v = map.diagonal_partial(k, &x[..=k]);
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !(lo > link.kmin() && hi < link.kmax()) {
        return Err(Error::LinkRange {
            min: lo,
            max: hi,
            kmin: link.kmin(),
            kmax: link.kmax(),
        });
    }
    let span = link.kmax() - link.kmin();
    let (floor, ceil) = (link.kmin() + 1e-12 * span, link.kmax() - 1e-12 * span);
    Ok(FnField::new(d, move |k, x| {
        let v = map.diagonal_partial(k, x).clamp(floor, ceil);
        link.phi_inverse(v).expect("clamped into the link range")
    }))
}

/// `Σ_k max|S_k - S̃_k| + Σ_k max|∂_k S_k - ∂_k S̃_k|` over `points`.
pub fn c1diag_distance<A, B>(s: &A, t: &B, points: &[Vec<f64>]) -> f64
where
    A: TriangularMap + ?Sized,
    B: TriangularMap + ?Sized,
{
    let d = s.dim();
    let mut value = vec![0.0f64; d];
    let mut partial = vec![0.0f64; d];
    for x in points {
        for k in 0..d {
            let (a, da) = s.component_and_partial(k, &x[..=k]);
            let (b, db) = t.component_and_partial(k, &x[..=k]);
            value[k] = value[k].max((a - b).abs());
            partial[k] = partial[k].max((da - db).abs());
        }
    }
    value.iter().sum::<f64>() + partial.iter().sum::<f64>()
}

/// `‖S‖_{C¹_diag}` over `points`.
pub fn c1diag_norm<A: TriangularMap + ?Sized>(s: &A, points: &[Vec<f64>]) -> f64 {
    let d = s.dim();
    let mut value = vec![0.0f64; d];
    let mut partial = vec![0.0f64; d];
    for x in points {
        for k in 0..d {
            let (a, da) = s.component_and_partial(k, &x[..=k]);
            value[k] = value[k].max(a.abs());
            partial[k] = partial[k].max(da.abs());
        }
    }
    value.iter().sum::<f64>() + partial.iter().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::map::FnMap;
    use crate::param::wavelet::BasisBackend;
    use crate::quadrature::probe_points;

    fn link() -> LinkFunction {
        LinkFunction::calibrated(0.25, 4.0).unwrap()
    }

    #[test]
    fn zero_theta_is_identity_at_nodes() {
        for backend in [BasisBackend::Haar, BasisBackend::Daubechies4] {
            let t = Theta::zeros(2, backend, 2, 2.0).unwrap();
            let s = rational_map(t, link()).unwrap();
            let quad = PanelQuadrature::new(s.rule()).unwrap();
            for (y, _) in quad.all_nodes() {
                for x0 in [0.0, 0.3, 1.0] {
                    assert!((s.component(1, &[x0, y]) - y).abs() < 1e-15);
                    assert_eq!(s.diagonal_partial(1, &[x0, y]), 1.0);
                }
                assert!((s.component(0, &[y]) - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn constant_field_cancels() {
        let s = RationalMap::new(FnField::new(1, |_, _| 0.7), link()).unwrap();
        for x in [0.0, 0.2, 0.5, 1.0] {
            assert!((s.component(0, &[x]) - x).abs() < 1e-14);
        }
    }

    #[test]
    fn endpoints_exact() {
        let mut t = Theta::zeros(2, BasisBackend::Haar, 2, 2.0).unwrap();
        for (i, v) in t.components[1].iter_mut().enumerate() {
            *v = (1.3 * i as f64).sin();
        }
        let s = rational_map(t, link()).unwrap();
        for x0 in [0.0, 0.4, 1.0] {
            assert_eq!(s.component(1, &[x0, 0.0]), 0.0);
            assert_eq!(s.component(1, &[x0, 1.0]), 1.0);
        }
    }

    #[test]
    fn reduced_fibre_matches_direct_expansion() {
        for backend in [BasisBackend::Haar, BasisBackend::Daubechies4] {
            let mut t = Theta::zeros(3, backend, 2, 2.0).unwrap();
            for c in &mut t.components {
                for (i, v) in c.iter_mut().enumerate() {
                    *v = (0.7 * i as f64).cos();
                }
            }
            let f = WaveletField::new(t).unwrap();
            let prefix = [0.31, 0.9];
            let mut g = f.fibre(2, &prefix);
            for y in [0.0, 0.13, 0.5, 0.999, 1.0] {
                let direct = f.eval(2, &[0.31, 0.9, y]);
                assert!((g(y) - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn c1diag_closed_form() {
        let id = FnMap::identity(1);
        let sq = FnMap::new(1, |_, x| x[0] * x[0], |_, x| 2.0 * x[0]);
        let pts: Vec<Vec<f64>> = (0..=1000).map(|i| vec![i as f64 / 1000.0]).collect();
        assert!((c1diag_distance(&id, &sq, &pts) - 1.25).abs() < 1e-12);
        assert_eq!(c1diag_distance(&id, &id, &pts), 0.0);
    }

    #[test]
    fn natural_parameter_of_identity_is_zero() {
        let f = natural_parameter(Arc::new(FnMap::identity(2)), link()).unwrap();
        for x in probe_points(2, 5) {
            assert!(f.eval(1, &x).abs() < 1e-12);
        }
        let tilt = FnMap::new(1, |_, x| 0.5 * x[0] * x[0] + 0.5 * x[0], |_, x| x[0] + 0.5);
        let f = natural_parameter(Arc::new(tilt), link()).unwrap();
        assert!((f.eval(0, &[0.3]) - link().phi_inverse(0.8).unwrap()).abs() < 1e-12);
        let steep = FnMap::new(1, |_, x| x[0].powi(6), |_, x| 6.0 * x[0].powi(5));
        assert!(matches!(
            natural_parameter(Arc::new(steep), link()),
            Err(Error::LinkRange { .. })
        ));
    }
}
