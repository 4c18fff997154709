#![allow(dead_code)]

use krtransport::density::FactorizedDensity;
use krtransport::estimator::Problem;
use krtransport::par::Execution;
use krtransport::param::{BasisBackend, LinkFunction, Theta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn link() -> LinkFunction {
    LinkFunction::calibrated(0.25, 4.0).unwrap()
}

pub fn random_theta(dim: usize, backend: BasisBackend, j: usize, scale: f64, rng: &mut impl Rng) -> Theta {
    let mut t = Theta::zeros(dim, backend, j, 2.0).unwrap();
    t.components
        .iter_mut()
        .flatten()
        .for_each(|v| *v = scale * (2.0 * rng.gen::<f64>() - 1.0));
    t
}

pub fn random_data(dim: usize, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..dim).map(|_| rng.gen()).collect()).collect()
}

/// Worst `|g - fd| / max(|g|, |fd|, 1e-3)` over all coordinates, central differences with `h = 1e-6`.
pub fn gradient_fd_error(
    dim: usize,
    backend: BasisBackend,
    j: usize,
    reference: &FactorizedDensity,
    seed: u64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let theta = random_theta(dim, backend, j, 0.5, &mut rng);
    let data = random_data(dim, 50, &mut rng);
    let prob = Problem::new(&data, reference, link(), &theta, 0.3, 2.0, Execution::default()).unwrap();
    let x = theta.to_flat();
    let (_, g) = prob.objective_and_gradient(&x);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for i in 0..x.len() {
        xp[i] = x[i] + h;
        let up = prob.objective(&xp);
        xp[i] = x[i] - h;
        let down = prob.objective(&xp);
        xp[i] = x[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((g[i] - fd).abs() / g[i].abs().max(fd.abs()).max(1e-3));
    }
    worst
}
