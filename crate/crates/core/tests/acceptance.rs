//! One pass/fail line per acceptance criterion; exits nonzero if any fails.
//!
//! The two rate studies read `configs/d1_alpha2.json` and `configs/d2_alpha2.json`
//! and take several minutes on one core.

mod common;

use common::{gradient_fd_error, link, random_theta};
use krtransport::density::{make_test_density, DensityField, DensitySpec, FactorizedDensity, Marginal};
use krtransport::experiment::{run_oracle_check, run_rate_study, write_rows_csv, ExperimentConfig, RateStudy};
use krtransport::kr::build_kr;
use krtransport::map::{pullback_density, TriangularMap};
use krtransport::metrics::{h1diag_map_distance, l2_distance};
use krtransport::param::{c1diag_distance, c1diag_norm, rational_map, BasisBackend, PanelQuadrature, PanelRule, Theta, WaveletField, ComponentField};
use krtransport::quadrature::{probe_points, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn config(name: &str) -> ExperimentConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect();
    ExperimentConfig::load(&path).expect("acceptance config")
}

fn slope(study: &RateStudy, metric: &str) -> Option<f64> {
    study.summary.metrics.get(metric)?.fit.map(|f| f.slope)
}

fn medians(study: &RateStudy, metric: &str) -> Vec<f64> {
    study.summary.metrics[metric].medians.iter().map(|m| m.1).collect()
}

fn rate_d1(study: &RateStudy) -> Outcome {
    let s = slope(study, "hellinger").unwrap_or(f64::NAN);
    let m = medians(study, "hellinger");
    let decreasing = m.windows(2).all(|w| w[1] < w[0]);
    outcome(
        (-0.55..=-0.25).contains(&s) && decreasing && m.len() == study.summary.n_grid.len(),
        format!(
            "hellinger slope {s:.4} in [-0.55, -0.25], medians {m:.4?} strictly decreasing, {}/{} fits converged",
            study.summary.converged_fits, study.summary.total_fits
        ),
    )
}

fn rate_d2(study: &RateStudy) -> Outcome {
    let s = slope(study, "hellinger").unwrap_or(f64::NAN);
    outcome(
        (-0.48..=-0.18).contains(&s),
        format!(
            "hellinger slope {s:.4} in [-0.48, -0.18], medians {:.4?}, {}/{} fits converged",
            medians(study, "hellinger"),
            study.summary.converged_fits,
            study.summary.total_fits
        ),
    )
}

fn kl_tracks_hellinger(study: &RateStudy) -> Outcome {
    let h = slope(study, "hellinger").unwrap_or(f64::NAN);
    let kl = slope(study, "kl").unwrap_or(f64::NAN);
    outcome(
        (kl - 2.0 * h).abs() <= 0.2,
        format!("kl slope {kl:.4} vs 2 x hellinger slope {:.4}", 2.0 * h),
    )
}

fn map_recovery(study: &RateStudy) -> Outcome {
    let h = slope(study, "hellinger").unwrap_or(f64::NAN);
    let m = slope(study, "h1diag").unwrap_or(f64::NAN);
    outcome(
        m < 0.0 && (m - h).abs() <= 0.2,
        format!("h1diag slope {m:.4} vs hellinger slope {h:.4}"),
    )
}

fn oracle() -> Outcome {
    let r1 = run_oracle_check(&config("d1_alpha2.json")).unwrap();
    let r2 = run_oracle_check(&config("d2_alpha2.json")).unwrap();
    let pass = r1.pushforward_sup_error <= 1e-8
        && r2.pushforward_sup_error <= 5e-4
        && r1.roundtrip_residual <= 1e-8
        && r2.roundtrip_residual <= 1e-8
        && r1.roundtrip_points >= 1000
        && r2.roundtrip_points >= 1000;
    outcome(
        pass,
        format!(
            "d=1 sup error {:.2e} (<= 1e-8), d=2 sup error {:.2e} (<= 5e-4), round trip {:.2e} / {:.2e} (<= 1e-8)",
            r1.pushforward_sup_error, r2.pushforward_sup_error, r1.roundtrip_residual, r2.roundtrip_residual
        ),
    )
}

fn gradients() -> Outcome {
    let mut worst = [0.0f64; 3];
    for d in 1..=3 {
        let j = if d == 3 { 1 } else { 2 };
        let eta = FactorizedDensity::uniform(d);
        for i in 0..20 {
            worst[d - 1] = worst[d - 1].max(gradient_fd_error(d, BasisBackend::Haar, j, &eta, 7000 + 100 * d as u64 + i));
        }
    }
    outcome(
        worst.iter().all(|&w| w <= 1e-5),
        format!("worst relative error d=1 {:.1e}, d=2 {:.1e}, d=3 {:.1e} (<= 1e-5)", worst[0], worst[1], worst[2]),
    )
}

fn structural_bounds() -> Outcome {
    let l = link();
    let (lo, hi) = (l.kmin() / (2.0 * l.kmax()), 2.0 * l.kmax() / l.kmin());
    let mut rng = ChaCha8Rng::seed_from_u64(8001);
    let pts = probe_points(2, 9);
    let (mut pmin, mut pmax) = (f64::INFINITY, 0.0f64);
    for i in 0..1000 {
        let backend = if i % 2 == 0 { BasisBackend::Haar } else { BasisBackend::Daubechies4 };
        let t = random_theta(2, backend, 2, 4.0, &mut rng);
        let s = rational_map(t, l).unwrap();
        for x in &pts {
            for k in 0..2 {
                let v = s.diagonal_partial(k, &x[..=k]);
                pmin = pmin.min(v);
                pmax = pmax.max(v);
            }
        }
    }

    // θ = 0 is the identity at every quadrature node
    let mut identity_err = 0.0f64;
    for backend in [BasisBackend::Haar, BasisBackend::Daubechies4] {
        let s = rational_map(Theta::zeros(2, backend, 2, 2.0).unwrap(), l).unwrap();
        let nodes = PanelQuadrature::new(PanelRule::for_basis(backend, 2)).unwrap().all_nodes();
        for &(a, _) in &nodes {
            for &(b, _) in nodes.iter().step_by(3) {
                identity_err = identity_err.max((s.component(0, &[a]) - a).abs());
                identity_err = identity_err.max((s.component(1, &[a, b]) - b).abs());
                identity_err = identity_err.max((s.diagonal_partial(1, &[a, b]) - 1.0).abs());
            }
        }
    }

    let bound = 2.0 * 2.0 * l.lipschitz() * (l.kmin() + l.kmax()) / (l.kmin() * l.kmin());
    let grid = probe_points(2, 17);
    let mut ratio = 0.0f64;
    for _ in 0..100 {
        let a = random_theta(2, BasisBackend::Haar, 2, 1.0, &mut rng);
        let mut b = a.clone();
        let eps = 10f64.powf(rng.gen_range(-3.0..0.0));
        b.components.iter_mut().flatten().for_each(|v| *v += eps * (2.0 * rng.gen::<f64>() - 1.0));
        let (fa, fb) = (WaveletField::new(a.clone()).unwrap(), WaveletField::new(b.clone()).unwrap());
        let sup = grid
            .iter()
            .flat_map(|x| (0..2).map(move |k| (k, x)))
            .map(|(k, x)| (fa.eval(k, &x[..=k]) - fb.eval(k, &x[..=k])).abs())
            .fold(0.0, f64::max);
        let (sa, sb) = (rational_map(a, l).unwrap(), rational_map(b, l).unwrap());
        ratio = ratio.max(c1diag_distance(&sa, &sb, &grid) / sup);
    }
    outcome(
        pmin >= lo && pmax <= hi && identity_err <= 1e-15 && ratio <= bound,
        format!(
            "partials in [{pmin:.4}, {pmax:.4}] within [{lo}, {hi}], identity error {identity_err:e} (<= 1e-15), increment ratio {ratio:.3} <= {bound:.3}"
        ),
    )
}

fn pullback_lipschitz() -> Outcome {
    let l = link();
    let mut rng = ChaCha8Rng::seed_from_u64(8002);
    let pts = probe_points(2, 17);
    let eta = FactorizedDensity::uniform(2).to_field();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let a = random_theta(2, BasisBackend::Haar, 1, 1.0, &mut rng);
        let b = random_theta(2, BasisBackend::Haar, 1, 1.0, &mut rng);
        let sa = Arc::new(rational_map(a, l).unwrap());
        let sb = Arc::new(rational_map(b, l).unwrap());
        let pa = pullback_density(sa.clone(), &eta).unwrap();
        let pb = pullback_density(sb.clone(), &eta).unwrap();
        let diff = pts.iter().map(|x| (pa.eval(x) - pb.eval(x)).abs()).fold(0.0, f64::max);
        let norm = c1diag_norm(sa.as_ref(), &pts).max(c1diag_norm(sb.as_ref(), &pts));
        worst = worst.max(diff / (c1diag_distance(sa.as_ref(), sb.as_ref(), &pts) * norm));
    }
    outcome(worst <= 1.0, format!("max ratio {worst:.4} over 100 pairs (constant 1 for uniform reference)"))
}

fn stability() -> Outcome {
    let p = make_test_density(&DensitySpec::NonproductCoupling { strength: 0.5 }, 2).unwrap();
    let pbar = FactorizedDensity::new(vec![Marginal::LinearTilt { a: 0.6 }, Marginal::LinearTilt { a: -0.4 }])
        .unwrap()
        .to_field();
    let eta = FactorizedDensity::uniform(2).to_field();
    let grid = GridSpec::gauss_legendre(2, 32, 4).unwrap();
    let base = build_kr(&p, &eta).unwrap();
    let ratios: Vec<f64> = [0.5, 0.25, 0.1, 0.05]
        .iter()
        .map(|&t| {
            let (p1, p2) = (p.clone(), pbar.clone());
            let pt = DensityField::new(2, 0.3, 2.0, move |x| (1.0 - t) * p1.eval(x) + t * p2.eval(x));
            let st = build_kr(&pt, &eta).unwrap();
            h1diag_map_distance(&st, &base, &grid).unwrap() / l2_distance(&pt, &p, &grid).unwrap()
        })
        .collect();
    let pass = ratios.iter().all(|r| r.is_finite()) && ratios.iter().all(|&r| r <= 2.0 * ratios[0]);
    outcome(pass, format!("ratios at t = 0.5, 0.25, 0.1, 0.05: {ratios:.4?}"))
}

fn determinism() -> Outcome {
    let mut cfg = config("d1_alpha2.json");
    cfg.n_grid = vec![200, 400, 800];
    cfg.replicates = 2;
    let csv = |cfg: &ExperimentConfig| {
        let mut buf = Vec::new();
        write_rows_csv(&run_rate_study(cfg).unwrap().rows, &mut buf).unwrap();
        buf
    };
    let (a, b) = (csv(&cfg), csv(&cfg));
    let mut cfg2 = config("d2_alpha2.json");
    cfg2.n_grid = vec![200, 400];
    cfg2.replicates = 2;
    let (c, d) = (csv(&cfg2), csv(&cfg2));
    outcome(
        a == b && c == d,
        format!("d=1 {} bytes, d=2 {} bytes, identical on rerun: {}", a.len(), c.len(), a == b && c == d),
    )
}

fn main() {
    // `cargo test -- --list` must not run the studies
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let started = Instant::now();
    let d1 = run_rate_study(&config("d1_alpha2.json")).expect("d=1 study");
    let d2 = run_rate_study(&config("d2_alpha2.json")).expect("d=2 study");
    let studies = started.elapsed().as_secs_f64();

    let results = [
        ("rate reproduction d=1 alpha=2", rate_d1(&d1)),
        ("rate reproduction d=2 alpha=2", rate_d2(&d2)),
        ("KL tracks squared Hellinger", kl_tracks_hellinger(&d1)),
        ("map recovery", map_recovery(&d1)),
        ("oracle correctness", oracle()),
        ("gradient correctness", gradients()),
        ("structural bounds", structural_bounds()),
        ("pullback Lipschitz", pullback_lipschitz()),
        ("stability", stability()),
        ("determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += usize::from(!o.pass);
    }
    println!(
        "rate studies took {studies:.0} s (d=1 {:.0} s, d=2 {:.0} s); {} of {} criteria passed",
        d1.summary.wall_time_s,
        d2.summary.wall_time_s,
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
