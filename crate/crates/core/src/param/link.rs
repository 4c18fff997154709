//! Bounded increasing link functions `Φ: R -> (K_min, K_max)`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

fn default_calibrated() -> bool {
    true
}

/// Link bounds as they appear in configs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub kmin: f64,
    pub kmax: f64,
    /// Shift the logistic so that `Φ(0) = 1`.
    #[serde(default = "default_calibrated")]
    pub calibrated: bool,
}

impl Default for LinkSpec {
    fn default() -> Self {
        Self {
            kmin: 0.25,
            kmax: 4.0,
            calibrated: true,
        }
    }
}

impl LinkSpec {
    pub fn build(&self) -> Result<LinkFunction> {
        if self.calibrated {
            LinkFunction::calibrated(self.kmin, self.kmax)
        } else {
            LinkFunction::logistic(self.kmin, self.kmax)
        }
    }
}

/// `Φ(t) = K_min + (K_max - K_min) / (1 + r e^{-t})`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinkFunction {
    kmin: f64,
    kmax: f64,
    log_r: f64,
}

impl LinkFunction {
    /// Plain logistic (`r = 1`).
    pub fn logistic(kmin: f64, kmax: f64) -> Result<Self> {
        check_bounds(kmin, kmax)?;
        Ok(Self {
            kmin,
            kmax,
            log_r: 0.0,
        })
    }

    /// Logistic with `r = (K_max - 1) / (1 - K_min)`, so `Φ(0) = 1`.
    pub fn calibrated(kmin: f64, kmax: f64) -> Result<Self> {
        check_bounds(kmin, kmax)?;
        if !(kmin < 1.0 && 1.0 < kmax) {
            return Err(Error::Config(format!(
                "calibrated link needs kmin < 1 < kmax, got ({kmin}, {kmax})"
            )));
        }
        Ok(Self {
            kmin,
            kmax,
            log_r: ((kmax - 1.0) / (1.0 - kmin)).ln(),
        })
    }

    pub fn kmin(&self) -> f64 {
        self.kmin
    }

    pub fn kmax(&self) -> f64 {
        self.kmax
    }

    /// Lipschitz constant of `Φ`.
    pub fn lipschitz(&self) -> f64 {
        0.25 * (self.kmax - self.kmin)
    }

    #[inline]
    fn sigma(&self, t: f64) -> f64 {
        let u = t - self.log_r;
        if u >= 0.0 {
            1.0 / (1.0 + (-u).exp())
        } else {
            let e = u.exp();
            e / (1.0 + e)
        }
    }

    #[inline]
    pub fn phi(&self, t: f64) -> f64 {
        self.kmin + (self.kmax - self.kmin) * self.sigma(t)
    }

    #[inline]
    pub fn phi_prime(&self, t: f64) -> f64 {
        let s = self.sigma(t);
        (self.kmax - self.kmin) * s * (1.0 - s)
    }

    /// `(Φ(t), Φ'(t))`.
    #[inline]
    pub fn phi_and_prime(&self, t: f64) -> (f64, f64) {
        let s = self.sigma(t);
        let w = self.kmax - self.kmin;
        (self.kmin + w * s, w * s * (1.0 - s))
    }

    pub fn phi_inverse(&self, v: f64) -> Result<f64> {
        if !(v > self.kmin && v < self.kmax) {
            return Err(Error::LinkRange {
                min: v,
                max: v,
                kmin: self.kmin,
                kmax: self.kmax,
            });
        }
        let s = (v - self.kmin) / (self.kmax - self.kmin);
        Ok((s / (1.0 - s)).ln() + self.log_r)
    }
}

fn check_bounds(kmin: f64, kmax: f64) -> Result<()> {
    if !(kmin > 0.0 && kmax > kmin && kmax.is_finite()) {
        return Err(Error::Config(format!(
            "link bounds must satisfy 0 < kmin < kmax, got ({kmin}, {kmax})"
        )));
    }
    Ok(())
}
