use crate::density::{make_test_density, DensityField, DensitySpec, FactorizedDensity};
use crate::error::{Error, Result};
use crate::estimator::{tuning_schedule, OptimizerConfig, Schedule};
use crate::param::{BasisBackend, LinkSpec};
use crate::quadrature::GridSpec;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Optional overrides of the tuning schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverride {
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default, rename = "J")]
    pub j: Option<usize>,
}

fn default_replicates() -> usize {
    1
}

fn default_reference() -> DensitySpec {
    DensitySpec::Uniform
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

/// Experiment description read from JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Ground-truth density `p₀`.
    pub density: DensitySpec,
    /// Reference `η`; must factorize.
    #[serde(default = "default_reference")]
    pub reference: DensitySpec,
    pub alpha: f64,
    pub d: usize,
    #[serde(default)]
    pub n_grid: Vec<usize>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub link: LinkSpec,
    #[serde(default)]
    pub basis: BasisBackend,
    #[serde(default)]
    pub schedule: ScheduleOverride,
    /// Output directory for `rates.csv` and `summary.json`.
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Record per-fit wall time in the CSV; off keeps reruns byte-identical.
    #[serde(default)]
    pub record_wall_time: bool,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Grid for density metrics; defaults to Gauss–Legendre panels aligned with dyadic points.
    #[serde(default)]
    pub metric_grid: Option<GridSpec>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.d > crate::map::MAX_DIM {
            return Err(Error::Config(format!("d must be in 1..={}", crate::map::MAX_DIM)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be at least 1".into()));
        }
        if self.n_grid.contains(&0) {
            return Err(Error::Config("n_grid entries must be positive".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if let Some(l) = self.schedule.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("schedule lambda must be nonnegative, got {l}")));
            }
        }
        self.link.build()?;
        self.reference_density().map_err(|e| match e {
            Error::UnsupportedReference => {
                Error::Config("reference density must factorize".into())
            }
            e => Error::Config(e.to_string()),
        })?;
        self.truth().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(g) = &self.metric_grid {
            g.with_dim(self.d).validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    pub fn truth(&self) -> Result<DensityField> {
        make_test_density(&self.density, self.d)
    }

    pub fn reference_density(&self) -> Result<FactorizedDensity> {
        self.reference.factorized(self.d)
    }

    /// Schedule for `n` samples with overrides applied.
    pub fn schedule_for(&self, n: usize) -> Result<Schedule> {
        let mut s = tuning_schedule(n.max(1), self.alpha, self.d)?;
        if let Some(l) = self.schedule.lambda {
            s.lambda = l;
        }
        if let Some(j) = self.schedule.j {
            s.j = j;
        }
        Ok(s)
    }

    pub fn metric_grid(&self) -> GridSpec {
        self.metric_grid
            .clone()
            .map(|g| g.with_dim(self.d))
            .unwrap_or_else(|| default_metric_grid(self.d))
    }
}

/// Four Gauss–Legendre nodes on each of `2^6` (d=1), `2^5` (d=2) or `2^4` panels per axis.
pub fn default_metric_grid(d: usize) -> GridSpec {
    let panels = match d {
        1 => 64,
        2 => 32,
        _ => 16,
    };
    GridSpec::gauss_legendre(d, panels, 4).expect("static grid is valid")
}
