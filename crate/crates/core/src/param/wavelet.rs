//! Tensor wavelet bases restricted to `Q_k`.
//!
//! Level 0 holds every tensor type, including the pure scaling function;
//! levels `l >= 1` hold the `2^k - 1` types with at least one wavelet factor.
//! Every translate whose support meets the cube is indexed. Factors carry the
//! `L²` normalization `2^{l/2}` per axis.
//!
//! Flat index within a component:
//! `level_offset[l] + slot * n_l^k + lex(m)` where `slot` is the type bitmask
//! (first axis most significant) at level 0 and the bitmask minus one above,
//! and `lex` runs over shifted translates with the last axis fastest.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisBackend {
    #[default]
    Haar,
    Daubechies4,
}

/// Dyadic resolution of the Daubechies-4 cascade table.
pub const CASCADE_LEVEL: u32 = 12;

/// Largest `f64` strictly below one; `x = 1` is evaluated as a left limit.
const ONE_MINUS: f64 = 1.0 - f64::EPSILON / 2.0;

pub(crate) fn d4_filter() -> [f64; 4] {
    let s3 = 3f64.sqrt();
    let n = 4.0 * std::f64::consts::SQRT_2;
    [(1.0 + s3) / n, (3.0 + s3) / n, (3.0 - s3) / n, (1.0 - s3) / n]
}

struct Cascade {
    phi: Vec<f64>,
    psi: Vec<f64>,
}

fn cascade() -> &'static Cascade {
    static TABLE: OnceLock<Cascade> = OnceLock::new();
    TABLE.get_or_init(|| {
        let h = d4_filter();
        let res = 1usize << CASCADE_LEVEL;
        let len = 3 * res + 1;
        let mut phi = vec![0.0; len];
        let s3 = 3f64.sqrt();
        phi[res] = (1.0 + s3) / 2.0;
        phi[2 * res] = (1.0 - s3) / 2.0;
        // fill dyadic levels coarse to fine with the two-scale relation
        for r in 1..=CASCADE_LEVEL {
            let step = res >> r;
            let mut i = step;
            while i < len {
                if (i / step) % 2 == 1 {
                    let mut v = 0.0;
                    for (k, hk) in h.iter().enumerate() {
                        let j = 2 * i as isize - (k * res) as isize;
                        if j >= 0 && (j as usize) < len {
                            v += hk * phi[j as usize];
                        }
                    }
                    phi[i] = std::f64::consts::SQRT_2 * v;
                }
                i += step;
            }
        }
        let mut psi = vec![0.0; len];
        for (i, out) in psi.iter_mut().enumerate() {
            let mut v = 0.0;
            for k in 0..4 {
                let g = if k % 2 == 0 { h[3 - k] } else { -h[3 - k] };
                let j = 2 * i as isize - (k * res) as isize;
                if j >= 0 && (j as usize) < len {
                    v += g * phi[j as usize];
                }
            }
            *out = std::f64::consts::SQRT_2 * v;
        }
        Cascade { phi, psi }
    })
}

fn table_lookup(table: &[f64], u: f64) -> f64 {
    if !(0.0..3.0).contains(&u) {
        return 0.0;
    }
    let pos = u * (1u64 << CASCADE_LEVEL) as f64;
    let i = pos.floor() as usize;
    let f = pos - i as f64;
    if f == 0.0 {
        table[i]
    } else {
        table[i] * (1.0 - f) + table[i + 1] * f
    }
}

impl BasisBackend {
    /// Unscaled scaling function (`e = 0`) or wavelet (`e = 1`).
    pub fn mother(self, e: usize, u: f64) -> f64 {
        match self {
            BasisBackend::Haar => {
                if !(0.0..1.0).contains(&u) {
                    0.0
                } else if e == 0 || u < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            BasisBackend::Daubechies4 => {
                let c = cascade();
                table_lookup(if e == 0 { &c.phi } else { &c.psi }, u)
            }
        }
    }

    /// Support length of the mother functions.
    pub fn support(self) -> usize {
        match self {
            BasisBackend::Haar => 1,
            BasisBackend::Daubechies4 => 3,
        }
    }

    /// Smallest translate whose support meets `[0, 1]`.
    pub fn first_translate(self) -> i64 {
        1 - self.support() as i64
    }

    pub fn translates(self, level: usize) -> usize {
        (1usize << level) + self.support() - 1
    }

    /// `2^{l/2} f_e(2^l x - m)`.
    pub fn factor(self, level: usize, e: usize, m: i64, x: f64) -> f64 {
        let scale = (1u64 << level) as f64;
        let u = scale * x.min(ONE_MINUS) - m as f64;
        scale.sqrt() * self.mother(e, u)
    }

    /// Nonzero-support factors at `x`: `(e, m - first_translate, value)`.
    pub fn active_1d(self, level: usize, x: f64, out: &mut Vec<(usize, usize, f64)>) {
        out.clear();
        let scale = (1u64 << level) as f64;
        let xs = scale * x.clamp(0.0, ONE_MINUS);
        let top = xs.floor() as i64;
        let norm = scale.sqrt();
        let m0 = self.first_translate();
        let last = (1i64 << level) - 1;
        for m in (top - self.support() as i64 + 1)..=top {
            if m < m0 || m > last {
                continue;
            }
            let u = xs - m as f64;
            for e in 0..2 {
                out.push((e, (m - m0) as usize, norm * self.mother(e, u)));
            }
        }
    }
}

/// Index of one tensor basis function.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisIndex {
    pub level: usize,
    /// Type bitmask, first axis most significant.
    pub types: usize,
    /// Translates per axis.
    pub translates: Vec<i64>,
}

/// Truncated tensor basis for one map component acting on `Q_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletBasis {
    backend: BasisBackend,
    kdim: usize,
    max_level: usize,
    per_level: Vec<usize>,
    offsets: Vec<usize>,
    reduced_offsets: Vec<usize>,
}

/// One term of a partial tensor product: type bits, lex index, value.
#[derive(Clone, Copy, Debug)]
pub struct TensorTerm {
    pub types: usize,
    pub lex: usize,
    pub value: f64,
}

/// Scratch space for basis enumeration.
#[derive(Default, Clone, Debug)]
pub struct BasisScratch {
    axis: Vec<Vec<(usize, usize, f64)>>,
    terms: Vec<TensorTerm>,
    next: Vec<TensorTerm>,
}

impl WaveletBasis {
    pub fn new(backend: BasisBackend, kdim: usize, max_level: usize) -> Result<Self> {
        if kdim == 0 || kdim > crate::map::MAX_DIM {
            return Err(Error::Input(format!("basis dimension {kdim} unsupported")));
        }
        if max_level > 20 {
            return Err(Error::Config(format!("resolution level {max_level} too large")));
        }
        let mut offsets = vec![0];
        let mut reduced_offsets = vec![0];
        let mut per_level = Vec::new();
        for l in 0..=max_level {
            let n = backend.translates(l);
            let types = if l == 0 { 1usize << kdim } else { (1usize << kdim) - 1 };
            let count = types
                .checked_mul(n.checked_pow(kdim as u32).unwrap_or(usize::MAX))
                .filter(|&c| c <= 1 << 24)
                .ok_or_else(|| Error::Config(format!("basis at level {l} in dimension {kdim} too large")))?;
            per_level.push(count);
            offsets.push(offsets[l] + count);
            reduced_offsets.push(reduced_offsets[l] + 2 * n);
        }
        Ok(Self {
            backend,
            kdim,
            max_level,
            per_level,
            offsets,
            reduced_offsets,
        })
    }

    pub fn backend(&self) -> BasisBackend {
        self.backend
    }

    pub fn kdim(&self) -> usize {
        self.kdim
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn len(&self) -> usize {
        self.offsets[self.max_level + 1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of basis functions at `level` (`L^k_l`).
    pub fn level_len(&self, level: usize) -> usize {
        self.per_level[level]
    }

    pub fn level_offset(&self, level: usize) -> usize {
        self.offsets[level]
    }

    pub fn level_of(&self, flat: usize) -> usize {
        self.offsets.partition_point(|&o| o <= flat) - 1
    }

    fn slot(level: usize, types: usize) -> Option<usize> {
        match (level, types) {
            (0, t) => Some(t),
            (_, 0) => None,
            (_, t) => Some(t - 1),
        }
    }

    pub fn index(&self, idx: &BasisIndex) -> Result<usize> {
        let l = idx.level;
        if l > self.max_level || idx.translates.len() != self.kdim || idx.types >= 1 << self.kdim {
            return Err(Error::Input(format!("basis index {idx:?} out of range")));
        }
        let slot = Self::slot(l, idx.types)
            .ok_or_else(|| Error::Input(format!("basis index {idx:?} out of range")))?;
        let n = self.backend.translates(l);
        let m0 = self.backend.first_translate();
        let mut lex = 0;
        for &m in &idx.translates {
            let s = m - m0;
            if s < 0 || s as usize >= n {
                return Err(Error::Input(format!("basis index {idx:?} out of range")));
            }
            lex = lex * n + s as usize;
        }
        Ok(self.offsets[l] + slot * n.pow(self.kdim as u32) + lex)
    }

    pub fn decode(&self, flat: usize) -> Result<BasisIndex> {
        if flat >= self.len() {
            return Err(Error::Input(format!("basis index {flat} out of range")));
        }
        let l = self.level_of(flat);
        let n = self.backend.translates(l);
        let block = n.pow(self.kdim as u32);
        let rel = flat - self.offsets[l];
        let slot = rel / block;
        let mut lex = rel % block;
        let types = if l == 0 { slot } else { slot + 1 };
        let mut translates = vec![0; self.kdim];
        for a in (0..self.kdim).rev() {
            translates[a] = (lex % n) as i64 + self.backend.first_translate();
            lex /= n;
        }
        Ok(BasisIndex {
            level: l,
            types,
            translates,
        })
    }

    /// `ψ_j(x)` by direct evaluation.
    pub fn basis_eval(&self, flat: usize, x: &[f64]) -> Result<f64> {
        let idx = self.decode(flat)?;
        if x.len() < self.kdim {
            return Err(Error::Input("point has too few coordinates".into()));
        }
        Ok((0..self.kdim)
            .map(|a| {
                let e = (idx.types >> (self.kdim - 1 - a)) & 1;
                self.backend.factor(idx.level, e, idx.translates[a], x[a])
            })
            .product())
    }

    /// Tensor terms over the first `axes` coordinates of `x` at `level`.
    pub fn tensor_terms<'s>(
        &self,
        level: usize,
        x: &[f64],
        axes: usize,
        scratch: &'s mut BasisScratch,
    ) -> &'s [TensorTerm] {
        let n = self.backend.translates(level);
        scratch.axis.resize_with(axes.max(1), Vec::new);
        scratch.terms.clear();
        scratch.terms.push(TensorTerm {
            types: 0,
            lex: 0,
            value: 1.0,
        });
        for a in 0..axes {
            self.backend.active_1d(level, x[a], &mut scratch.axis[a]);
            scratch.next.clear();
            for t in &scratch.terms {
                for &(e, m, v) in &scratch.axis[a] {
                    if v != 0.0 {
                        scratch.next.push(TensorTerm {
                            types: (t.types << 1) | e,
                            lex: t.lex * n + m,
                            value: t.value * v,
                        });
                    }
                }
            }
            std::mem::swap(&mut scratch.terms, &mut scratch.next);
        }
        &scratch.terms
    }

    /// Appends `(flat, ψ_j(x))` for every basis function whose support contains `x`.
    pub fn active(&self, x: &[f64], scratch: &mut BasisScratch, out: &mut Vec<(usize, f64)>) {
        out.clear();
        for l in 0..=self.max_level {
            let block = self.backend.translates(l).pow(self.kdim as u32);
            let base = self.offsets[l];
            for t in self.tensor_terms(l, x, self.kdim, scratch) {
                if let Some(slot) = Self::slot(l, t.types) {
                    out.push((base + slot * block + t.lex, t.value));
                }
            }
        }
    }

    /// `Σ_j θ_j ψ_j(x)` over active terms.
    pub fn expand(&self, theta: &[f64], x: &[f64], scratch: &mut BasisScratch) -> f64 {
        let mut acc = 0.0;
        for l in 0..=self.max_level {
            let block = self.backend.translates(l).pow(self.kdim as u32);
            let base = self.offsets[l];
            for t in self.tensor_terms(l, x, self.kdim, scratch) {
                if let Some(slot) = Self::slot(l, t.types) {
                    acc += theta[base + slot * block + t.lex] * t.value;
                }
            }
        }
        acc
    }

    /// Length of the reduced one-dimensional expansion along the last axis.
    pub fn reduced_len(&self) -> usize {
        self.reduced_offsets[self.max_level + 1]
    }

    /// Reduced index of the last-axis factor `(level, e, m - first_translate)`.
    #[inline]
    pub fn reduced_index(&self, level: usize, e: usize, m: usize) -> usize {
        self.reduced_offsets[level] + e * self.backend.translates(level) + m
    }

    /// Calls `f(flat, reduced, weight)` for every basis function, where the
    /// basis function equals `weight` times the last-axis factor `reduced` on
    /// the fibre through `prefix`. Terms with zero weight are skipped.
    pub fn for_each_on_fibre(
        &self,
        prefix: &[f64],
        scratch: &mut BasisScratch,
        mut f: impl FnMut(usize, usize, f64),
    ) {
        let k = self.kdim;
        for l in 0..=self.max_level {
            let n = self.backend.translates(l);
            let block = n.pow(k as u32);
            let base = self.offsets[l];
            for t in self.tensor_terms(l, prefix, k - 1, scratch) {
                for e in 0..2 {
                    let types = (t.types << 1) | e;
                    let Some(slot) = Self::slot(l, types) else {
                        continue;
                    };
                    let start = base + slot * block + t.lex * n;
                    let rstart = self.reduced_offsets[l] + e * n;
                    for m in 0..n {
                        f(start + m, rstart + m, t.value);
                    }
                }
            }
        }
    }

    /// Active reduced factors at `y`: `(reduced, value)`.
    pub fn reduced_active(&self, y: f64, scratch: &mut BasisScratch, out: &mut Vec<(usize, f64)>) {
        out.clear();
        scratch.axis.resize_with(1, Vec::new);
        for l in 0..=self.max_level {
            self.backend.active_1d(l, y, &mut scratch.axis[0]);
            for &(e, m, v) in &scratch.axis[0] {
                if v != 0.0 {
                    out.push((self.reduced_index(l, e, m), v));
                }
            }
        }
    }
}
