//! Wavelet coefficient vectors for all map components.

use super::wavelet::{BasisBackend, WaveletBasis};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Coefficients `θ = (θ¹, …, θ^d)` over the index sets of levels `0..=J`.
#[derive(Clone, Debug, PartialEq)]
pub struct Theta {
    pub alpha: f64,
    pub max_level: usize,
    pub backend: BasisBackend,
    pub components: Vec<Vec<f64>>,
}

/// JSON form: `{alpha, J, basis, components: [[k, l, m, value], …]}` with 1-based `k` and `m`.
#[derive(Serialize, Deserialize)]
struct ThetaJson {
    alpha: f64,
    #[serde(rename = "J")]
    j: usize,
    #[serde(default)]
    basis: BasisBackend,
    #[serde(default)]
    dim: Option<usize>,
    components: Vec<(usize, usize, usize, f64)>,
}

impl Theta {
    pub fn zeros(dim: usize, backend: BasisBackend, max_level: usize, alpha: f64) -> Result<Self> {
        let components = (1..=dim)
            .map(|k| WaveletBasis::new(backend, k, max_level).map(|b| vec![0.0; b.len()]))
            .collect::<Result<_>>()?;
        Ok(Self {
            alpha,
            max_level,
            backend,
            components,
        })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn bases(&self) -> Result<Vec<WaveletBasis>> {
        (1..=self.dim())
            .map(|k| WaveletBasis::new(self.backend, k, self.max_level))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.components.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.components.concat()
    }

    /// Same shape as `self`, values from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        let mut at = 0;
        for c in &mut out.components {
            let n = c.len();
            c.copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().flatten().all(|&v| v == 0.0)
    }

    /// `2^{2lα}` for every flat coordinate.
    pub fn penalty_weights(&self, alpha: f64) -> Result<Vec<f64>> {
        let mut w = Vec::with_capacity(self.len());
        for b in self.bases()? {
            for l in 0..=b.max_level() {
                let v = (2.0 * l as f64 * alpha).exp2();
                w.extend(std::iter::repeat_n(v, b.level_len(l)));
            }
        }
        Ok(w)
    }

    pub fn to_json(&self) -> Result<serde_json::Value> {
        let bases = self.bases()?;
        let mut entries = Vec::with_capacity(self.len());
        for (k, (basis, coeffs)) in bases.iter().zip(&self.components).enumerate() {
            for (j, &v) in coeffs.iter().enumerate() {
                let l = basis.level_of(j);
                entries.push((k + 1, l, j - basis.level_offset(l) + 1, v));
            }
        }
        Ok(serde_json::to_value(ThetaJson {
            alpha: self.alpha,
            j: self.max_level,
            basis: self.backend,
            dim: Some(self.dim()),
            components: entries,
        })?)
    }

    /// Parses the JSON form; omitted coefficients are zero.
    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let raw: ThetaJson = serde_json::from_value(value)?;
        let dim = raw
            .dim
            .or_else(|| raw.components.iter().map(|e| e.0).max())
            .ok_or_else(|| Error::Input("theta has no dimension and no coefficients".into()))?;
        let mut theta = Self::zeros(dim, raw.basis, raw.j, raw.alpha)?;
        let bases = theta.bases()?;
        for (k, l, m, v) in raw.components {
            if k == 0 || k > dim {
                return Err(Error::Input(format!("theta component {k} out of range 1..={dim}")));
            }
            let b = &bases[k - 1];
            if l > raw.j || m == 0 || m > b.level_len(l) {
                return Err(Error::Input(format!(
                    "theta index (k={k}, l={l}, m={m}) out of range"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Input(format!("theta coefficient (k={k}, l={l}, m={m}) is not finite")));
            }
            theta.components[k - 1][b.level_offset(l) + m - 1] = v;
        }
        Ok(theta)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_json()?)?;
        std::fs::write(path, text + "\n").map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// `‖θ‖_{b^α_22} = (Σ_k Σ_l Σ_m 2^{2lα} |θ^k_{lm}|²)^{1/2}`.
pub fn b_alpha_norm(theta: &Theta, alpha: f64) -> f64 {
    b_alpha_norm_squared(theta, alpha).sqrt()
}

pub fn b_alpha_norm_squared(theta: &Theta, alpha: f64) -> f64 {
    let bases = theta.bases().expect("theta shape was validated at construction");
    let mut acc = 0.0;
    for (b, c) in bases.iter().zip(&theta.components) {
        for l in 0..=b.max_level() {
            let w = (2.0 * l as f64 * alpha).exp2();
            let start = b.level_offset(l);
            acc += w * c[start..start + b.level_len(l)].iter().map(|v| v * v).sum::<f64>();
        }
    }
    acc
}
