#![allow(dead_code)]

use fpesc_core::fields::{Embedding, MlpField, QuadraticPotential, TimeMode};
use fpesc_core::jets::{binomial, Series};
use fpesc_core::linalg;
use fpesc_core::selfcons::GaussianInitial;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Tensor-product central difference of `∂ᵃφ(x)` with step `h`.
pub fn central(phi: &dyn Fn(&[f64]) -> f64, x: &[f64], a: &[usize], h: f64) -> f64 {
    let d = x.len();
    let mut counters = vec![0usize; d];
    let mut total = 0.0;
    let mut p = x.to_vec();
    loop {
        let mut w = 1.0;
        for i in 0..d {
            let (n, k) = (a[i], counters[i]);
            p[i] = x[i] + (n as f64 / 2.0 - k as f64) * h;
            w *= binomial(n, k) * if k % 2 == 0 { 1.0 } else { -1.0 };
        }
        total += w * phi(&p);
        let mut i = 0;
        loop {
            if i == d {
                let order: usize = a.iter().sum();
                return total / h.powi(order as i32);
            }
            counters[i] += 1;
            if counters[i] <= a[i] {
                break;
            }
            counters[i] = 0;
            i += 1;
        }
    }
}

/// Richardson-extrapolated central difference over a step sweep; returns the
/// estimate whose neighbor in the sweep agrees best.
pub fn fd_partial(phi: &dyn Fn(&[f64]) -> f64, x: &[f64], a: &[usize], steps: &[f64]) -> f64 {
    let rich = |h: f64| (4.0 * central(phi, x, a, h / 2.0) - central(phi, x, a, h)) / 3.0;
    let ests: Vec<f64> = steps.iter().map(|&h| rich(h)).collect();
    let mut best = ests[0];
    let mut gap = f64::INFINITY;
    for w in ests.windows(2) {
        let g = (w[0] - w[1]).abs();
        if g < gap {
            gap = g;
            best = w[1];
        }
    }
    best
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Tanh network with every weight and bias drawn from `N(0, scale²/fan_in)`.
pub fn random_mlp(hidden: &[usize], seed: u64, scale: f64) -> MlpField {
    let mut sizes = vec![3];
    sizes.extend_from_slice(hidden);
    sizes.push(2);
    let mut field = MlpField::zeros(sizes.clone(), Series::Tanh, TimeMode::Append, Embedding::None).unwrap();
    let mut r = rng(seed);
    let mut params = Vec::new();
    for w in sizes.windows(2) {
        let normal = Normal::new(0.0, scale / (w[0] as f64).sqrt()).unwrap();
        for _ in 0..w[0] * w[1] + w[1] {
            params.push(normal.sample(&mut r));
        }
    }
    field.set_params(&params).unwrap();
    field
}

pub fn ou_init() -> GaussianInitial {
    GaussianInitial::new(vec![-4.0, -4.0], linalg::diag(&[0.7, 1.3])).unwrap()
}

pub fn ou_pot() -> QuadraticPotential {
    QuadraticPotential::new(vec![4.0, 4.0], linalg::diag(&[1.1, 0.9])).unwrap()
}

/// Relative error with a floor on the denominator.
pub fn rel_err(got: f64, want: f64, floor: f64) -> f64 {
    (got - want).abs() / want.abs().max(floor)
}

pub fn ou_path(dt: f64) -> fpesc_core::oracle::GaussianPath {
    fpesc_core::oracle::evolve_gaussian(
        &[-4.0, -4.0],
        &linalg::diag(&[0.7, 1.3]),
        &[4.0, 4.0],
        &linalg::diag(&[1.1, 0.9]),
        3.0,
        dt,
    )
    .unwrap()
}

pub fn ou_oracle(dt: f64) -> fpesc_core::oracle::OracleField {
    let path = std::sync::Arc::new(ou_path(dt));
    fpesc_core::oracle::OracleField::new(path, ou_pot()).unwrap()
}
