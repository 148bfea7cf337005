//! Reproducible random streams and initial-condition sampling.
//!
//! Sample `i` of a batch drawn with seed `s` comes from ChaCha20 seeded with
//! `s` on stream `i`, so any sample can be regenerated on its own and a batch
//! is independent of how it is split across workers.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::selfcons::GaussianInitial;

/// The random stream for sample `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Seed for the batch of training step `step` (SplitMix64 finalizer).
pub fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `μ₀ + Γ₀ᵀz`, `z ~ N(0, I)`, with `Γ₀ = √Σ₀`.
pub fn sample_initial<R: rand::Rng + ?Sized>(init: &GaussianInitial, rng: &mut R) -> Vec<f64> {
    let d = init.dim();
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    let root = init.root();
    (0..d)
        .map(|i| init.mu0()[i] + (0..d).map(|j| root[(j, i)] * z[j]).sum::<f64>())
        .collect()
}

/// `n` initial points, point `i` drawn from stream `i` of `seed`.
pub fn sample_points(init: &GaussianInitial, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| sample_initial(init, &mut stream(seed, i as u64)))
        .collect()
}
