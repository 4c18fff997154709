use krtransport::density::{make_test_density, DensitySpec, FactorizedDensity, Marginal};
use krtransport::kr::build_kr;
use krtransport::map::{pullback_density, TriangularMap};
use krtransport::param::*;
use krtransport::quadrature::probe_points;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn link() -> LinkFunction {
    LinkFunction::calibrated(0.25, 4.0).unwrap()
}

fn random_theta(dim: usize, backend: BasisBackend, j: usize, scale: f64, rng: &mut ChaCha8Rng) -> Theta {
    let mut t = Theta::zeros(dim, backend, j, 2.0).unwrap();
    t.components
        .iter_mut()
        .flatten()
        .for_each(|v| *v = scale * (2.0 * rng.gen::<f64>() - 1.0));
    t
}

/// `(φ(x), φ(x+1), φ(x+2))` for dyadic `x = 0.b_1…b_n` via products of the
/// two-scale matrices `(T_e)_{ij} = √2 h_{2i+e-j}` applied to the integer values.
fn d4_phi_oracle(bits: &[u8]) -> [f64; 3] {
    let s3 = 3f64.sqrt();
    let n = 4.0 * 2f64.sqrt();
    let h = [(1.0 + s3) / n, (3.0 + s3) / n, (3.0 - s3) / n, (1.0 - s3) / n];
    let t = |e: usize| {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let k = (2 * i + e) as isize - j as isize;
                if (0..4).contains(&k) {
                    *v = 2f64.sqrt() * h[k as usize];
                }
            }
        }
        m
    };
    let mut v = [0.0, (1.0 + s3) / 2.0, (1.0 - s3) / 2.0];
    for &b in bits.iter().rev() {
        let m = t(b as usize);
        let mut w = [0.0; 3];
        for i in 0..3 {
            for j in 0..3 {
                w[i] += m[i][j] * v[j];
            }
        }
        v = w;
    }
    v
}

fn phi_oracle_at(u: f64) -> f64 {
    if !(0.0..3.0).contains(&u) {
        return 0.0;
    }
    let i = u.floor() as usize;
    let frac = ((u - i as f64) * 4096.0).round() as u32;
    let bits: Vec<u8> = (0..12).map(|b| ((frac >> (11 - b)) & 1) as u8).collect();
    d4_phi_oracle(&bits)[i]
}

#[test]
fn d4_table_matches_matrix_product_oracle() {
    let b = BasisBackend::Daubechies4;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..500 {
        let i = rng.gen_range(0..3 * 4096);
        let u = i as f64 / 4096.0;
        assert!((b.mother(0, u) - phi_oracle_at(u)).abs() < 1e-6, "phi({u})");
        // ψ(u) = √2 Σ_k (-1)^k h_{3-k} φ(2u - k)
        let s3 = 3f64.sqrt();
        let n = 4.0 * 2f64.sqrt();
        let h = [(1.0 + s3) / n, (3.0 + s3) / n, (3.0 - s3) / n, (1.0 - s3) / n];
        let psi: f64 = (0..4)
            .map(|k| {
                let g = if k % 2 == 0 { h[3 - k] } else { -h[3 - k] };
                2f64.sqrt() * g * phi_oracle_at(2.0 * u - k as f64)
            })
            .sum();
        assert!((b.mother(1, u) - psi).abs() < 1e-6, "psi({u})");
    }
    // scaled and translated functions at dyadic points
    for l in 0..3usize {
        for m in -2..(1i64 << l) {
            let x = rng.gen_range(0..4096) as f64 / 4096.0;
            let u = (1u64 << l) as f64 * x - m as f64;
            let want = (1u64 << l) as f64;
            let want = want.sqrt() * phi_oracle_at(u);
            assert!((b.factor(l, 0, m, x) - want).abs() < 1e-6);
        }
    }
}

#[test]
fn outside_support_is_zero() {
    for backend in [BasisBackend::Haar, BasisBackend::Daubechies4] {
        for e in 0..2 {
            assert_eq!(backend.mother(e, -0.01), 0.0);
            assert_eq!(backend.mother(e, backend.support() as f64), 0.0);
        }
        let b = WaveletBasis::new(backend, 1, 3).unwrap();
        let j = b.index(&BasisIndex { level: 3, types: 1, translates: vec![0] }).unwrap();
        assert_eq!(b.basis_eval(j, &[0.9]).unwrap(), 0.0);
        assert!(b.basis_eval(b.len(), &[0.5]).is_err());
    }
}

#[test]
fn sparse_theta_matches_full_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for backend in [BasisBackend::Haar, BasisBackend::Daubechies4] {
        for dim in 1..=3 {
            let mut t = Theta::zeros(dim, backend, 2, 2.0).unwrap();
            for c in &mut t.components {
                for v in c.iter_mut() {
                    if rng.gen::<f64>() < 0.2 {
                        *v = rng.gen::<f64>() - 0.5;
                    }
                }
            }
            let bases = t.bases().unwrap();
            let field = WaveletField::new(t.clone()).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..dim).map(|_| rng.gen()).collect();
                for k in 0..dim {
                    let naive: f64 = (0..bases[k].len())
                        .map(|j| t.components[k][j] * bases[k].basis_eval(j, &x[..=k]).unwrap())
                        .sum();
                    assert!((field.eval(k, &x[..=k]) - naive).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn scaling_coefficient_gives_constant_field() {
    let v = serde_json::json!({"alpha": 2.0, "J": 2, "basis": "haar", "components": [[1, 0, 1, 1.0]]});
    let field = WaveletField::new(Theta::from_json(v).unwrap()).unwrap();
    for i in 0..=100 {
        assert_eq!(field.eval(0, &[i as f64 / 100.0]), 1.0);
    }
    assert_eq!(field.eval(0, &[1.0]), 1.0);
}

#[test]
fn logistic_link_component_matches_closed_form() {
    // Φ(y) = 1/2 + (3/2)/(1 + e^{-y}) has antiderivative y/2 + (3/2) ln(1 + e^y)
    let l = LinkFunction::logistic(0.5, 2.0).unwrap();
    let s = RationalMap::new(FnField::new(1, |_, x| x[0]), l).unwrap();
    let anti = |y: f64| 0.5 * y + 1.5 * (1.0 + y.exp()).ln();
    let closed = (anti(0.5) - anti(0.0)) / (anti(1.0) - anti(0.0));
    // refined composite Simpson as a second, independent oracle
    let simpson = |b: f64| {
        let n = 20_000;
        let h = b / n as f64;
        let mut acc = l.phi(0.0) + l.phi(b);
        for i in 1..n {
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * l.phi(i as f64 * h);
        }
        acc * h / 3.0
    };
    assert!((closed - simpson(0.5) / simpson(1.0)).abs() < 1e-12);
    assert!((s.component(0, &[0.5]) - closed).abs() < 1e-8);
}

#[test]
fn diagonal_partial_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_theta(2, BasisBackend::Haar, 2, 1.0, &mut rng);
    let s = rational_map(t, link()).unwrap();
    let smooth = RationalMap::new(FnField::new(2, |k, x| (3.0 * x[k]).sin() + x[0] * x[k]), link()).unwrap();
    let h = 1e-5;
    for _ in 0..200 {
        let x: Vec<f64> = vec![rng.gen(), rng.gen_range(0.01..0.99)];
        // stay away from the Haar breakpoints on the 1/8 mesh
        let cell = (x[1] * 8.0).fract();
        for k in 0..2 {
            let mut p = x.clone();
            p[k] = x[k] + h;
            let up = smooth.component(k, &p[..=k]);
            p[k] = x[k] - h;
            let down = smooth.component(k, &p[..=k]);
            let fd = (up - down) / (2.0 * h);
            assert!((fd - smooth.diagonal_partial(k, &x[..=k])).abs() < 1e-6);
        }
        if !(0.01..0.99).contains(&cell) {
            continue;
        }
        let fd = (s.component(1, &[x[0], x[1] + h]) - s.component(1, &[x[0], x[1] - h])) / (2.0 * h);
        assert!((fd - s.diagonal_partial(1, &x)).abs() < 1e-6);
    }
}

#[test]
fn diagonal_partials_within_link_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (lo, hi) = (0.25 / (2.0 * 4.0), 2.0 * 4.0 / 0.25);
    let pts = probe_points(2, 9);
    for i in 0..200 {
        let backend = if i % 2 == 0 { BasisBackend::Haar } else { BasisBackend::Daubechies4 };
        let t = random_theta(2, backend, 2, 5.0, &mut rng);
        let s = rational_map(t, link()).unwrap();
        for x in &pts {
            for k in 0..2 {
                let v = s.diagonal_partial(k, &x[..=k]);
                assert!(v >= lo && v <= hi, "{v}");
            }
        }
    }
}

#[test]
fn natural_parameter_reproduces_oracle_map() {
    let nu = make_test_density(&DensitySpec::NonproductCoupling { strength: 0.5 }, 2).unwrap();
    let eta = make_test_density(&DensitySpec::Uniform, 2).unwrap();
    let kr = Arc::new(build_kr(&nu, &eta).unwrap());
    let field = natural_parameter(kr.clone(), link()).unwrap();
    let s = RationalMap::new(field, link()).unwrap();
    let mut worst: f64 = 0.0;
    for x in probe_points(2, 33) {
        for k in 0..2 {
            worst = worst.max((s.component(k, &x[..=k]) - kr.component(k, &x[..=k])).abs());
        }
    }
    assert!(worst <= 1e-5, "reconstruction error {worst}");

    // closed form in one dimension
    let tilt = make_test_density(&DensitySpec::LinearTilt { a: 0.5 }, 1).unwrap();
    let kr1 = Arc::new(build_kr(&tilt, &make_test_density(&DensitySpec::Uniform, 1).unwrap()).unwrap());
    let f = natural_parameter(kr1, link()).unwrap();
    for x in [0.1, 0.5, 0.8] {
        assert!((f.eval(0, &[x]) - link().phi_inverse(x + 0.5).unwrap()).abs() < 1e-9);
    }
}

#[test]
fn natural_parameter_range_error() {
    let nu = make_test_density(&DensitySpec::NonproductCoupling { strength: 0.9 }, 2).unwrap();
    let eta = make_test_density(&DensitySpec::Uniform, 2).unwrap();
    let kr = Arc::new(build_kr(&nu, &eta).unwrap());
    let narrow = LinkFunction::calibrated(0.5, 1.5).unwrap();
    let err = natural_parameter(kr, narrow).unwrap_err();
    assert!(err.to_string().contains("link"), "{err}");
}

/// `2d L_Φ (K_min + K_max) / K_min²` bounds `‖S_F - S_F̃‖_{C¹_diag} / ‖F - F̃‖_∞`.
fn increment_constant(dim: usize, l: &LinkFunction) -> f64 {
    2.0 * dim as f64 * l.lipschitz() * (l.kmin() + l.kmax()) / (l.kmin() * l.kmin())
}

#[test]
fn increment_bound_holds_with_one_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = increment_constant(2, &link());
    let pts = probe_points(2, 17);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let a = random_theta(2, BasisBackend::Haar, 2, 1.0, &mut rng);
        let mut b = a.clone();
        let eps = 10f64.powf(rng.gen_range(-3.0..0.0));
        b.components.iter_mut().flatten().for_each(|v| *v += eps * (2.0 * rng.gen::<f64>() - 1.0));
        let fa = WaveletField::new(a.clone()).unwrap();
        let fb = WaveletField::new(b.clone()).unwrap();
        let sup = pts
            .iter()
            .flat_map(|x| (0..2).map(move |k| (k, x)))
            .map(|(k, x)| (fa.eval(k, &x[..=k]) - fb.eval(k, &x[..=k])).abs())
            .fold(0.0, f64::max);
        let sa = rational_map(a, link()).unwrap();
        let sb = rational_map(b, link()).unwrap();
        worst = worst.max(c1diag_distance(&sa, &sb, &pts) / sup);
    }
    assert!(worst <= m, "ratio {worst} exceeds {m}");
}

#[test]
fn pullback_lipschitz_in_two_dimensions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let l = link();
    let pts = probe_points(2, 17);
    let uniform = FactorizedDensity::uniform(2).to_field();
    let tilted = FactorizedDensity::new(vec![Marginal::LinearTilt { a: 0.4 }, Marginal::LinearTilt { a: -0.3 }])
        .unwrap();
    // η Lipschitz in the l¹ sense: |η(s) - η(t)| <= sup|η_1'| sup η_2 |Δs_1| + …
    let lip_eta = 2.0 * 0.4 * 1.3 + 2.0 * 0.3 * 1.4;
    let c_tilted = tilted.upper_bound() + lip_eta * 2.0 * l.kmax() / l.kmin();
    for (eta, c) in [(uniform, 1.0), (tilted.to_field(), c_tilted)] {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let a = random_theta(2, BasisBackend::Haar, 1, 1.0, &mut rng);
            let b = random_theta(2, BasisBackend::Haar, 1, 1.0, &mut rng);
            let sa = Arc::new(rational_map(a, l).unwrap());
            let sb = Arc::new(rational_map(b, l).unwrap());
            let pa = pullback_density(sa.clone(), &eta).unwrap();
            let pb = pullback_density(sb.clone(), &eta).unwrap();
            let diff = pts.iter().map(|x| (pa.eval(x) - pb.eval(x)).abs()).fold(0.0, f64::max);
            let dist = c1diag_distance(sa.as_ref(), sb.as_ref(), &pts);
            let norm = c1diag_norm(sa.as_ref(), &pts).max(c1diag_norm(sb.as_ref(), &pts));
            worst = worst.max(diff / (dist * norm));
        }
        assert!(worst <= c, "ratio {worst} exceeds {c}");
    }
}

#[test]
fn haar_represents_dyadic_step_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for dim in 1..=2usize {
        let j = 2;
        let cells = 1usize << j;
        let values: Vec<f64> = (0..cells.pow(dim as u32)).map(|_| rng.gen::<f64>() - 0.5).collect();
        let step = |x: &[f64]| {
            let mut idx = 0;
            for &v in x {
                idx = idx * cells + ((v * cells as f64) as usize).min(cells - 1);
            }
            values[idx]
        };
        let basis = WaveletBasis::new(BasisBackend::Haar, dim, j).unwrap();
        // exact projection: integrands are constant on the 2^{-(J+1)} mesh
        let fine = 1usize << (j + 1);
        let mids: Vec<Vec<f64>> = probe_points(dim, fine);
        let vol = 1.0 / mids.len() as f64;
        let coeffs: Vec<f64> = (0..basis.len())
            .map(|b| mids.iter().map(|x| step(x) * basis.basis_eval(b, x).unwrap()).sum::<f64>() * vol)
            .collect();
        let mut scratch = BasisScratch::default();
        for x in probe_points(dim, 37) {
            let back = basis.expand(&coeffs, &x, &mut scratch);
            assert!((back - step(&x)).abs() < 1e-12);
        }
    }
}

proptest! {
    #[test]
    fn component_is_monotone_with_exact_endpoints(seed in any::<u64>(), x0 in 0.0f64..=1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_theta(2, BasisBackend::Daubechies4, 1, 2.0, &mut rng);
        let s = rational_map(t, link()).unwrap();
        prop_assert_eq!(s.component(1, &[x0, 0.0]), 0.0);
        prop_assert_eq!(s.component(1, &[x0, 1.0]), 1.0);
        let mut prev = 0.0;
        for i in 1..=64 {
            let v = s.component(1, &[x0, i as f64 / 64.0]);
            prop_assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn b_alpha_norm_is_homogeneous(seed in any::<u64>(), c in -5.0f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = random_theta(2, BasisBackend::Haar, 2, 1.0, &mut rng);
        let mut scaled = t.clone();
        scaled.components.iter_mut().flatten().for_each(|v| *v *= c);
        let lhs = b_alpha_norm(&scaled, 2.0);
        let rhs = c.abs() * b_alpha_norm(&t, 2.0);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1.0));
    }

    #[test]
    fn link_inverse_round_trip(t in -8.0f64..8.0) {
        let l = link();
        prop_assert!((l.phi_inverse(l.phi(t)).unwrap() - t).abs() < 1e-10);
    }
}
