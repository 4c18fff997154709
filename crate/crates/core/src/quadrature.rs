//! Tensor-product quadrature on the unit cube.

use crate::error::{Error, Result};
use crate::par::{self, Execution};
use serde::{Deserialize, Serialize};

/// Largest tensor grid (total node count) accepted by [`GridSpec::validate`].
pub const MAX_GRID_NODES: usize = 1 << 24;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct GaussLegendre {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "Gauss-Legendre order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n.div_ceil(2) {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integrates `f` over `[a, b]`.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (s, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * s);
        }
        acc * half
    }
}

/// Legendre polynomial `P_n(x)` and its derivative.
pub(crate) fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = if (1.0 - x * x).abs() < 1e-300 {
        let nf = n as f64;
        0.5 * nf * (nf + 1.0) * if x > 0.0 { 1.0 } else { (-1.0f64).powi(n as i32 + 1) }
    } else {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p1, d)
}

/// Fills `out[0..=n]` with `P_0(s), …, P_n(s)`.
pub(crate) fn legendre_all(s: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = s;
    }
    for k in 2..out.len() {
        let kf = k as f64;
        out[k] = ((2.0 * kf - 1.0) * s * out[k - 1] - (kf - 1.0) * out[k - 2]) / kf;
    }
}

/// One-dimensional rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Rule {
    /// Trapezoid rule on `nodes` equispaced points including both endpoints.
    Trapezoid { nodes: usize },
    /// Composite Gauss–Legendre with `panels` equal panels of `order` points.
    GaussLegendre { panels: usize, order: usize },
}

impl Rule {
    pub fn nodes_per_axis(&self) -> usize {
        match *self {
            Rule::Trapezoid { nodes } => nodes,
            Rule::GaussLegendre { panels, order } => panels * order,
        }
    }

    /// Nodes in `[0, 1]` and weights summing to one.
    pub fn nodes_and_weights(&self) -> (Vec<f64>, Vec<f64>) {
        match *self {
            Rule::Trapezoid { nodes } => {
                let h = 1.0 / (nodes - 1) as f64;
                let xs = (0..nodes).map(|i| i as f64 * h).collect();
                let ws = (0..nodes)
                    .map(|i| if i == 0 || i == nodes - 1 { 0.5 * h } else { h })
                    .collect();
                (xs, ws)
            }
            Rule::GaussLegendre { panels, order } => {
                let gl = GaussLegendre::new(order);
                let h = 1.0 / panels as f64;
                let mut xs = Vec::with_capacity(panels * order);
                let mut ws = Vec::with_capacity(panels * order);
                for p in 0..panels {
                    let a = p as f64 * h;
                    for (s, w) in gl.nodes().iter().zip(gl.weights()) {
                        xs.push(a + 0.5 * h * (s + 1.0));
                        ws.push(0.5 * h * w);
                    }
                }
                (xs, ws)
            }
        }
    }
}

/// Tensor-product quadrature grid over `Q_dim = [0,1]^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    #[serde(flatten)]
    pub rule: Rule,
}

impl GridSpec {
    pub fn new(dim: usize, rule: Rule) -> Result<Self> {
        let g = Self { dim, rule };
        g.validate()?;
        Ok(g)
    }

    pub fn trapezoid(dim: usize, nodes: usize) -> Result<Self> {
        Self::new(dim, Rule::Trapezoid { nodes })
    }

    pub fn gauss_legendre(dim: usize, panels: usize, order: usize) -> Result<Self> {
        Self::new(dim, Rule::GaussLegendre { panels, order })
    }

    /// 513 trapezoid nodes in one dimension, 129² in two, 33³ in three and
    /// 17 per axis beyond.
    pub fn default_for_dim(dim: usize) -> Self {
        let nodes = match dim {
            0 | 1 => 513,
            2 => 129,
            3 => 33,
            _ => 17,
        };
        Self {
            dim: dim.max(1),
            rule: Rule::Trapezoid { nodes },
        }
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.rule.nodes_per_axis()
    }

    pub fn total_nodes(&self) -> Option<usize> {
        self.nodes_per_axis().checked_pow(self.dim as u32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Grid("dimension must be at least 1".into()));
        }
        if let Rule::GaussLegendre { panels, order } = self.rule {
            if panels == 0 || order == 0 {
                return Err(Error::Grid("panels and order must be positive".into()));
            }
        }
        if self.nodes_per_axis() < 2 {
            return Err(Error::Grid("at least two nodes per axis are required".into()));
        }
        match self.total_nodes() {
            Some(n) if n <= MAX_GRID_NODES => Ok(()),
            _ => Err(Error::Grid(format!(
                "{}^{} nodes exceeds the budget of {MAX_GRID_NODES}",
                self.nodes_per_axis(),
                self.dim
            ))),
        }
    }

    /// Same rule in another dimension.
    pub fn with_dim(&self, dim: usize) -> Self {
        Self {
            dim,
            rule: self.rule.clone(),
        }
    }

    pub fn build(&self) -> Result<TensorGrid> {
        self.validate()?;
        let (nodes, weights) = self.rule.nodes_and_weights();
        Ok(TensorGrid {
            dim: self.dim,
            nodes,
            weights,
        })
    }
}

/// Materialized tensor grid.
#[derive(Clone, Debug)]
pub struct TensorGrid {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl TensorGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn axis_nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn axis_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len().pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Point and weight of the node with linear index `idx` (last axis fastest).
    pub fn point(&self, mut idx: usize, out: &mut [f64]) -> f64 {
        let n = self.nodes.len();
        let mut w = 1.0;
        for a in (0..self.dim).rev() {
            let i = idx % n;
            idx /= n;
            out[a] = self.nodes[i];
            w *= self.weights[i];
        }
        w
    }

    /// Weighted sum of `f` over the nodes whose first coordinate has index `i0`.
    fn slice_sum<F>(&self, i0: usize, f: &F) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        let n = self.nodes.len();
        let inner = n.pow(self.dim as u32 - 1);
        let mut x = vec![0.0; self.dim];
        let mut acc = 0.0;
        for j in 0..inner {
            let w = self.point(i0 * inner + j, &mut x);
            let v = f(&x);
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    point: x.clone(),
                    value: v,
                });
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// Quadrature of `f`. Slices along the first axis may run concurrently;
    /// their partial sums are combined in index order.
    pub fn integrate<F>(&self, exec: Execution, f: &F) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync + ?Sized,
    {
        let parts = par::map_items(exec, (0..self.nodes.len()).collect(), |i0| {
            self.slice_sum(i0, f)
        });
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total)
    }

    /// Evaluates `f` at every node (row-major, last axis fastest).
    pub fn map<F>(&self, exec: Execution, f: &F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync + ?Sized,
    {
        let n = self.nodes.len();
        let inner = n.pow(self.dim as u32 - 1);
        par::map_items(exec, (0..n).collect(), |i0| {
            let mut x = vec![0.0; self.dim];
            (0..inner)
                .map(|j| {
                    self.point(i0 * inner + j, &mut x);
                    f(&x)
                })
                .collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Product weights in the same order as [`TensorGrid::map`].
    pub fn weights(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.dim];
        (0..self.len()).map(|i| self.point(i, &mut x)).collect()
    }
}

/// Approximates `∫_{Q_k} f` on `grid`.
pub fn integrate<F>(f: F, grid: &GridSpec) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    grid.build()?.integrate(Execution::default(), &f)
}

/// Cell-midpoint probe points of an `n`-per-axis uniform grid on `Q_dim`.
pub fn probe_points(dim: usize, n: usize) -> Vec<Vec<f64>> {
    let total = n.pow(dim as u32);
    (0..total)
        .map(|mut idx| {
            let mut x = vec![0.0; dim];
            for a in (0..dim).rev() {
                x[a] = ((idx % n) as f64 + 0.5) / n as f64;
                idx /= n;
            }
            x
        })
        .collect()
}
