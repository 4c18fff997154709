//! Oracle self-checks and convergence-rate studies.

mod config;

pub use config::{default_metric_grid, ExperimentConfig, ScheduleOverride};

use crate::density::DensityField;
use crate::error::{Error, Result};
use crate::estimator::{fit, FitConfig};
use crate::kr::{build_kr, sample_target, KrMap};
use crate::map::{pullback_density, TriangularMap};
use crate::metrics::{h1diag_map_distance, metrics_report, rate_fit, RateFit};
use crate::par::{self, Execution};
use crate::param::{b_alpha_norm_squared, rational_map};
use crate::quadrature::probe_points;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

/// Metric names in CSV order.
pub const METRICS: [&str; 5] = ["h1diag", "hellinger", "kl", "l2", "tau2"];

pub const CSV_HEADER: &str = "n,replicate,seed,metric,value,lambda,j_level,wall_time_s,converged";

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replicate `rep` at the `n_index`-th sample size.
pub fn replicate_seed(seed: u64, n_index: usize, rep: usize) -> u64 {
    seed ^ splitmix64(((n_index as u64) << 32) | rep as u64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub d: usize,
    /// `sup |S^#η - p₀|` over the probe grid.
    pub pushforward_sup_error: f64,
    pub monotonicity_min: f64,
    /// `max |S^{-1}(S(x)) - x|` over random points.
    pub roundtrip_residual: f64,
    pub probe_points: usize,
    pub roundtrip_points: usize,
}

const ORACLE_PROBES: [usize; 3] = [1001, 101, 21];
const ROUNDTRIP_POINTS: usize = 1000;

/// Builds the KR map of `(p₀, η)` and measures its pushforward error,
/// monotonicity and inversion accuracy.
pub fn run_oracle_check(config: &ExperimentConfig) -> Result<OracleReport> {
    let truth = config.truth()?;
    let reference = config.reference_density()?;
    let eta = reference.to_field();
    let kr = Arc::new(build_kr(&truth, &eta)?);
    let d = config.d;
    let probes = probe_points(d, ORACLE_PROBES[(d - 1).min(2)]);
    let pulled = pullback_density(kr.clone(), &eta)?;
    let errors = par::map_items(Execution::default(), probes.clone(), |x| {
        (pulled.eval(&x) - truth.eval(&x)).abs()
    });
    let pushforward_sup_error = errors.into_iter().fold(0.0, f64::max);
    let monotonicity_min = kr.monotonicity_min(&probes);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let points: Vec<Vec<f64>> = (0..ROUNDTRIP_POINTS)
        .map(|_| (0..d).map(|_| rng.gen::<f64>()).collect())
        .collect();
    let residuals = par::map_items(Execution::default(), points, |x| {
        let z = kr.eval(&x);
        kr.invert(&z).map(|back| {
            back.iter()
                .zip(&x)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
    });
    let mut roundtrip_residual: f64 = 0.0;
    for r in residuals {
        roundtrip_residual = roundtrip_residual.max(r?);
    }
    Ok(OracleReport {
        d,
        pushforward_sup_error,
        monotonicity_min,
        roundtrip_residual,
        probe_points: probes.len(),
        roundtrip_points: ROUNDTRIP_POINTS,
    })
}

/// One `(N, replicate, metric)` record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
    pub lambda: f64,
    pub j_level: usize,
    pub wall_time_s: f64,
    pub converged: bool,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{:.16e},{:.16e},{},{:.16e},{}",
            self.n,
            self.replicate,
            self.seed,
            self.metric,
            self.value,
            self.lambda,
            self.j_level,
            self.wall_time_s,
            self.converged
        )
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.trim_end().split(',').collect();
        if f.len() != 9 {
            return Err(Error::Input(format!("expected 9 fields, got {}: {line}", f.len())));
        }
        let bad = |what: &str| Error::Input(format!("bad {what} in row: {line}"));
        Ok(Self {
            n: f[0].parse().map_err(|_| bad("n"))?,
            replicate: f[1].parse().map_err(|_| bad("replicate"))?,
            seed: f[2].parse().map_err(|_| bad("seed"))?,
            metric: f[3].to_string(),
            value: f[4].parse().map_err(|_| bad("value"))?,
            lambda: f[5].parse().map_err(|_| bad("lambda"))?,
            j_level: f[6].parse().map_err(|_| bad("j_level"))?,
            wall_time_s: f[7].parse().map_err(|_| bad("wall_time_s"))?,
            converged: f[8].parse().map_err(|_| bad("converged"))?,
        })
    }
}

pub fn write_rows_csv(rows: &[ResultRow], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(out, "{}", r.to_csv())?;
    }
    Ok(())
}

pub fn read_rows_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim_end() == CSV_HEADER => {}
        _ => return Err(Error::Input("missing or unexpected CSV header".into())),
    }
    lines.filter(|l| !l.trim().is_empty()).map(ResultRow::from_csv).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub fit: Option<RateFit>,
    pub theoretical_slope: f64,
    /// `(N, median over converged replicates)`.
    pub medians: Vec<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub alpha: f64,
    pub d: usize,
    pub n_grid: Vec<usize>,
    pub replicates: usize,
    pub rows: usize,
    pub converged_fits: usize,
    pub total_fits: usize,
    pub metrics: BTreeMap<String, MetricSummary>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct RateStudy {
    pub rows: Vec<ResultRow>,
    pub summary: StudySummary,
}

/// Metric values of one replicate.
struct ReplicateOutcome {
    values: [f64; 5],
    lambda: f64,
    j: usize,
    wall: f64,
    converged: bool,
}

struct StudyContext {
    truth: DensityField,
    reference: crate::density::FactorizedDensity,
    eta: DensityField,
    oracle: Arc<KrMap>,
}

fn run_replicate(cfg: &ExperimentConfig, ctx: &StudyContext, n: usize, seed: u64) -> Result<ReplicateOutcome> {
    let start = Instant::now();
    let schedule = cfg.schedule_for(n)?;
    let data = sample_target(&ctx.oracle, n, seed)?;
    let fit_cfg = FitConfig {
        alpha: cfg.alpha,
        lambda: schedule.lambda,
        max_level: schedule.j,
        link: cfg.link,
        basis: cfg.basis,
        optimizer: cfg.optimizer.clone(),
        initial_theta: None,
        execution: Execution::default(),
    };
    let result = fit(&data, &ctx.reference, &fit_cfg)?;
    let map = Arc::new(rational_map(result.theta_hat.clone(), cfg.link.build()?)?);
    let fitted = pullback_density(map.clone(), &ctx.eta)?;
    let grid = cfg.metric_grid();
    let report = metrics_report(&ctx.truth, &fitted, &grid)?;
    let h1 = h1diag_map_distance(map.as_ref(), ctx.oracle.as_ref(), &grid)?;
    let tau2 = report.hellinger.powi(2)
        + schedule.lambda.powi(2) * b_alpha_norm_squared(&result.theta_hat, cfg.alpha);
    Ok(ReplicateOutcome {
        values: [h1, report.hellinger, report.kl, report.l2, tau2],
        lambda: schedule.lambda,
        j: schedule.j,
        wall: start.elapsed().as_secs_f64(),
        converged: result.converged,
    })
}

fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Theoretical log-log slope of each metric.
pub fn theoretical_slope(metric: &str, alpha: f64, d: usize) -> f64 {
    let r = alpha / (2.0 * alpha + d as f64);
    match metric {
        "kl" | "tau2" => -2.0 * r,
        _ => -r,
    }
}

/// Summary of rows: per-metric medians of converged replicates and slope fits.
pub fn summarize(rows: &[ResultRow], alpha: f64, d: usize, replicates: usize, wall_time_s: f64) -> StudySummary {
    let mut n_grid: Vec<usize> = rows.iter().map(|r| r.n).collect();
    n_grid.sort_unstable();
    n_grid.dedup();
    let mut metrics = BTreeMap::new();
    for m in METRICS {
        let mut medians = Vec::new();
        for &n in &n_grid {
            let mut vals: Vec<f64> = rows
                .iter()
                .filter(|r| r.metric == m && r.n == n && r.converged && r.value.is_finite())
                .map(|r| r.value)
                .collect();
            if let Some(med) = median(&mut vals) {
                medians.push((n, med));
            }
        }
        let pts: Vec<(f64, f64)> = medians.iter().map(|&(n, v)| (n as f64, v)).collect();
        metrics.insert(
            m.to_string(),
            MetricSummary {
                fit: rate_fit(&pts).ok(),
                theoretical_slope: theoretical_slope(m, alpha, d),
                medians,
            },
        );
    }
    let fits: Vec<&ResultRow> = rows.iter().filter(|r| r.metric == METRICS[1]).collect();
    StudySummary {
        alpha,
        d,
        n_grid,
        replicates,
        rows: rows.len(),
        converged_fits: fits.iter().filter(|r| r.converged).count(),
        total_fits: fits.len(),
        metrics,
        wall_time_s,
    }
}

/// Samples, fits and scores every `(N, replicate)` pair of the config.
///
/// A failed fit yields rows with `NaN` values and `converged = false`.
pub fn run_rate_study(config: &ExperimentConfig) -> Result<RateStudy> {
    config.validate()?;
    if config.n_grid.is_empty() {
        return Err(Error::Config("n_grid must not be empty for a rate study".into()));
    }
    let start = Instant::now();
    let truth = config.truth()?;
    let reference = config.reference_density()?;
    let eta = reference.to_field();
    let oracle = Arc::new(build_kr(&truth, &eta)?);
    let ctx = StudyContext {
        truth,
        reference,
        eta,
        oracle,
    };
    let tasks: Vec<(usize, usize)> = (0..config.n_grid.len())
        .flat_map(|i| (0..config.replicates).map(move |r| (i, r)))
        .collect();
    let outcomes = par::map_items(Execution::default(), tasks, |(i, rep)| {
        let n = config.n_grid[i];
        let seed = replicate_seed(config.seed, i, rep);
        (n, rep, seed, run_replicate(config, &ctx, n, seed))
    });
    let mut rows = Vec::with_capacity(outcomes.len() * METRICS.len());
    for (n, rep, seed, outcome) in outcomes {
        let (values, lambda, j, wall, converged) = match outcome {
            Ok(o) => (o.values, o.lambda, o.j, o.wall, o.converged),
            Err(e) if e.is_config_error() => return Err(e),
            Err(_) => {
                let s = config.schedule_for(n)?;
                ([f64::NAN; 5], s.lambda, s.j, 0.0, false)
            }
        };
        for (m, v) in METRICS.iter().zip(values) {
            rows.push(ResultRow {
                n,
                replicate: rep,
                seed,
                metric: m.to_string(),
                value: v,
                lambda,
                j_level: j,
                wall_time_s: if config.record_wall_time { wall } else { 0.0 },
                converged,
            });
        }
    }
    rows.sort_by(|a, b| (a.n, a.replicate, &a.metric).cmp(&(b.n, b.replicate, &b.metric)));
    let summary = summarize(&rows, config.alpha, config.d, config.replicates, start.elapsed().as_secs_f64());
    Ok(RateStudy { rows, summary })
}

/// Writes `rates.csv` and `summary.json` into `dir`.
pub fn write_study(study: &RateStudy, dir: &Path) -> Result<()> {
    let io = |path: &Path| {
        let p = path.display().to_string();
        move |source| Error::Io { path: p, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let csv = dir.join("rates.csv");
    let mut buf = Vec::new();
    write_rows_csv(&study.rows, &mut buf).map_err(io(&csv))?;
    std::fs::write(&csv, buf).map_err(io(&csv))?;
    let json = dir.join("summary.json");
    let text = serde_json::to_string_pretty(&study.summary)?;
    std::fs::write(&json, text + "\n").map_err(io(&json))?;
    Ok(())
}
