//! Penalized negative log-likelihood of a rational map and its gradient.

use crate::density::FactorizedDensity;
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::param::{
    BasisScratch, LinkFunction, PanelQuadrature, PanelRule, Theta, WaveletBasis,
};

/// Distance by which boundary data are moved into the open cube.
pub const BOUNDARY_NUDGE: f64 = 1e-12;

/// Samples per work block. Blocks are reduced in order, so results do not
/// depend on the execution mode.
const BLOCK: usize = 256;

/// Data, reference and discretization for one fit.
#[derive(Clone, Debug)]
pub struct Problem {
    dim: usize,
    n: usize,
    data: Vec<f64>,
    reference: FactorizedDensity,
    link: LinkFunction,
    bases: Vec<WaveletBasis>,
    offsets: Vec<usize>,
    quad: PanelQuadrature,
    nodes: Vec<(f64, f64)>,
    /// Active reduced factors per full-panel node: ranges into `node_terms`.
    node_ranges: Vec<(usize, usize)>,
    node_terms: Vec<(usize, f64)>,
    reduced_len: usize,
    penalty: Vec<f64>,
    lambda: f64,
    execution: Execution,
    shape: Theta,
}

/// Per-thread buffers.
#[derive(Default)]
struct Work {
    scratch: BasisScratch,
    terms: Vec<(usize, usize, f64)>,
    coeffs: Vec<f64>,
    total: Vec<f64>,
    below: Vec<f64>,
    reduced_grad: Vec<f64>,
    act: Vec<(usize, f64)>,
}

/// Prefix-independent integrals of the first component.
struct SharedFibre {
    coeffs: Vec<f64>,
    cum_phi: Vec<f64>,
    /// `(panels + 1) x reduced_len`, cumulative `Σ w Φ'(F) B_r`.
    cum_grad: Vec<f64>,
}

impl Problem {
    /// `data` rows must lie in `Q_d`; coordinates on the boundary are nudged inward.
    pub fn new(
        data: &[Vec<f64>],
        reference: &FactorizedDensity,
        link: LinkFunction,
        shape: &Theta,
        lambda: f64,
        alpha: f64,
        execution: Execution,
    ) -> Result<Self> {
        let dim = reference.dim();
        if shape.dim() != dim {
            return Err(Error::Input(format!(
                "theta has {} components, reference has dimension {dim}",
                shape.dim()
            )));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be nonnegative, got {lambda}")));
        }
        let mut flat = Vec::with_capacity(data.len() * dim);
        for (i, row) in data.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Input(format!(
                    "data point {i} has {} coordinates, expected {dim}",
                    row.len()
                )));
            }
            for &v in row {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Input(format!("data point {i} lies outside the unit cube: {row:?}")));
                }
                flat.push(v.clamp(BOUNDARY_NUDGE, 1.0 - BOUNDARY_NUDGE));
            }
        }
        let bases = shape.bases()?;
        let mut offsets = vec![0];
        for b in &bases {
            offsets.push(offsets.last().unwrap() + b.len());
        }
        let quad = PanelQuadrature::new(PanelRule::for_basis(shape.backend, shape.max_level))?;
        let nodes = quad.all_nodes();
        let mut node_ranges = Vec::with_capacity(nodes.len());
        let mut node_terms = Vec::new();
        let mut scratch = BasisScratch::default();
        let mut act = Vec::new();
        for &(y, _) in &nodes {
            bases[0].reduced_active(y, &mut scratch, &mut act);
            node_ranges.push((node_terms.len(), act.len()));
            node_terms.extend_from_slice(&act);
        }
        let reduced_len = bases[0].reduced_len();
        Ok(Self {
            dim,
            n: data.len(),
            data: flat,
            reference: reference.clone(),
            link,
            offsets,
            quad,
            nodes,
            node_ranges,
            node_terms,
            reduced_len,
            penalty: shape.penalty_weights(alpha)?,
            lambda,
            execution,
            shape: shape.with_flat(&vec![0.0; shape.len()]),
            bases,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets[self.dim]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    pub fn theta_from_flat(&self, flat: &[f64]) -> Theta {
        self.shape.with_flat(flat)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `λ² Σ w_j θ_j²`.
    pub fn penalty(&self, theta: &[f64]) -> f64 {
        let s: f64 = theta.iter().zip(&self.penalty).map(|(t, w)| w * t * t).sum();
        self.lambda * self.lambda * s
    }

    /// `-(1/N) Σ_i log S^#η(X_i)`; zero without data.
    pub fn negative_log_likelihood(&self, theta: &[f64]) -> f64 {
        self.nll_and_gradient(theta, false).0
    }

    pub fn objective(&self, theta: &[f64]) -> f64 {
        self.negative_log_likelihood(theta) + self.penalty(theta)
    }

    pub fn objective_and_gradient(&self, theta: &[f64]) -> (f64, Vec<f64>) {
        let (nll, mut g) = self.nll_and_gradient(theta, true);
        let l2 = self.lambda * self.lambda;
        for ((gj, t), w) in g.iter_mut().zip(theta).zip(&self.penalty) {
            *gj += 2.0 * l2 * w * t;
        }
        (nll + self.penalty(theta), g)
    }

    fn shared_fibre(&self, theta: &[f64], grad: bool) -> SharedFibre {
        let r_len = self.reduced_len;
        let mut coeffs = vec![0.0; r_len];
        let mut scratch = BasisScratch::default();
        let th0 = &theta[..self.offsets[1]];
        self.bases[0].for_each_on_fibre(&[], &mut scratch, |j, r, w| coeffs[r] += w * th0[j]);
        let panels = self.quad.panels();
        let q = self.quad.order();
        let mut cum_phi = vec![0.0; panels + 1];
        let mut cum_grad = if grad { vec![0.0; (panels + 1) * r_len] } else { Vec::new() };
        let mut phi_acc = 0.0;
        for p in 0..panels {
            if grad {
                let (head, tail) = cum_grad.split_at_mut((p + 1) * r_len);
                tail[..r_len].copy_from_slice(&head[p * r_len..]);
            }
            for i in p * q..(p + 1) * q {
                let (_, w) = self.nodes[i];
                let terms = self.node_slice(i);
                let f: f64 = terms.iter().map(|&(r, v)| coeffs[r] * v).sum();
                let (phi, dphi) = self.link.phi_and_prime(f);
                phi_acc += w * phi;
                if grad {
                    let row = &mut cum_grad[(p + 1) * r_len..(p + 2) * r_len];
                    for &(r, v) in terms {
                        row[r] += w * dphi * v;
                    }
                }
            }
            cum_phi[p + 1] = phi_acc;
        }
        SharedFibre {
            coeffs,
            cum_phi,
            cum_grad,
        }
    }

    #[inline]
    fn node_slice(&self, i: usize) -> &[(usize, f64)] {
        let (s, l) = self.node_ranges[i];
        &self.node_terms[s..s + l]
    }

    fn nll_and_gradient(&self, theta: &[f64], grad: bool) -> (f64, Vec<f64>) {
        assert_eq!(theta.len(), self.len(), "theta length mismatch");
        let total_len = self.len();
        if self.n == 0 {
            return (0.0, vec![0.0; total_len]);
        }
        let shared = self.shared_fibre(theta, grad);
        let blocks = par::map_blocks(self.execution, self.n, BLOCK, |range| {
            let mut work = Work::default();
            let mut g = if grad { vec![0.0; total_len] } else { Vec::new() };
            let mut loss = 0.0;
            for i in range {
                let x = &self.data[i * self.dim..(i + 1) * self.dim];
                for k in 0..self.dim {
                    loss += self.sample_component(theta, &shared, k, x, &mut work, grad.then_some(&mut g[..]));
                }
            }
            (loss, g)
        });
        let inv_n = 1.0 / self.n as f64;
        let mut loss = 0.0;
        let mut g = vec![0.0; if grad { total_len } else { 0 }];
        for (l, bg) in blocks {
            loss += l;
            for (a, b) in g.iter_mut().zip(&bg) {
                *a += b;
            }
        }
        g.iter_mut().for_each(|v| *v *= inv_n);
        (loss * inv_n, g)
    }

    /// Loss `-log e_k(S_k) - log ∂_k S_k` of one sample and component; adds the
    /// unnormalized gradient to `grad`.
    fn sample_component(
        &self,
        theta: &[f64],
        shared: &SharedFibre,
        k: usize,
        x: &[f64],
        work: &mut Work,
        grad: Option<&mut [f64]>,
    ) -> f64 {
        let r_len = self.reduced_len;
        let want = grad.is_some();
        let xk = x[k];
        let px = self.quad.panel_of(xk);
        let panels = self.quad.panels();
        let q = self.quad.order();
        let basis = &self.bases[k];
        let th = &theta[self.offsets[k]..self.offsets[k + 1]];

        work.total.clear();
        work.total.resize(r_len, 0.0);
        work.below.clear();
        work.below.resize(r_len, 0.0);

        let (z, mut num);
        if k == 0 {
            work.coeffs.clone_from(&shared.coeffs);
            z = shared.cum_phi[panels];
            num = shared.cum_phi[px];
            if want {
                work.total.copy_from_slice(&shared.cum_grad[panels * r_len..]);
                work.below.copy_from_slice(&shared.cum_grad[px * r_len..(px + 1) * r_len]);
            }
        } else {
            work.terms.clear();
            work.coeffs.clear();
            work.coeffs.resize(r_len, 0.0);
            let Work {
                scratch,
                terms,
                coeffs,
                ..
            } = work;
            basis.for_each_on_fibre(&x[..k], scratch, |j, r, w| {
                coeffs[r] += w * th[j];
                terms.push((j, r, w));
            });
            let mut zz = 0.0;
            num = 0.0;
            for p in 0..panels {
                if p == px {
                    num = zz;
                    if want {
                        work.below.copy_from_slice(&work.total);
                    }
                }
                for i in p * q..(p + 1) * q {
                    let (_, w) = self.nodes[i];
                    let terms = self.node_slice(i);
                    let f: f64 = terms.iter().map(|&(r, v)| work.coeffs[r] * v).sum();
                    let (phi, dphi) = self.link.phi_and_prime(f);
                    zz += w * phi;
                    if want {
                        for &(r, v) in terms {
                            work.total[r] += w * dphi * v;
                        }
                    }
                }
            }
            z = zz;
        }

        // partial panel up to x_k
        for (y, w) in self.quad.partial_nodes(xk) {
            basis.reduced_active(y, &mut work.scratch, &mut work.act);
            let f: f64 = work.act.iter().map(|&(r, v)| work.coeffs[r] * v).sum();
            let (phi, dphi) = self.link.phi_and_prime(f);
            num += w * phi;
            if want {
                for &(r, v) in &work.act {
                    work.below[r] += w * dphi * v;
                }
            }
        }

        basis.reduced_active(xk, &mut work.scratch, &mut work.act);
        let fx: f64 = work.act.iter().map(|&(r, v)| work.coeffs[r] * v).sum();
        let (phi_x, dphi_x) = self.link.phi_and_prime(fx);
        let s = (num / z).clamp(0.0, 1.0);
        let e = self.reference.marginal(k);
        let e_s = e.pdf(s);
        let loss = -e_s.ln() - (phi_x / z).ln();

        if let Some(g) = grad {
            let rho = e.pdf_derivative(s) / e_s;
            // d loss / d c_r
            let rg = &mut work.reduced_grad;
            rg.clear();
            rg.extend(
                work.total
                    .iter()
                    .zip(&work.below)
                    .map(|(&gt, &ab)| gt / z - rho * (ab - s * gt) / z),
            );
            for &(r, v) in &work.act {
                rg[r] -= dphi_x * v / phi_x;
            }
            let g = &mut g[self.offsets[k]..self.offsets[k + 1]];
            if k == 0 {
                basis.for_each_on_fibre(&[], &mut work.scratch, |j, r, w| g[j] += w * rg[r]);
            } else {
                for &(j, r, w) in &work.terms {
                    g[j] += w * rg[r];
                }
            }
        }
        loss
    }
}
