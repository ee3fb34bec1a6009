//! Seeded randomness. Every stochastic component draws from a ChaCha8 stream
//! whose seed is derived from a root seed and a component label, so parts of
//! an experiment can be replayed independently.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

pub type XRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> XRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive a named sub-seed (`corpus`, `init`, `batching`, `pool`, ...).
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

pub fn sub_rng(seed: u64, label: &str) -> XRng {
    rng_from_seed(sub_seed(seed, label))
}

pub fn normal(rng: &mut XRng) -> f64 {
    StandardNormal.sample(rng)
}

/// Normal(0, std) truncated to two standard deviations by resampling.
pub fn truncated_normal(rng: &mut XRng, std: f64) -> f64 {
    loop {
        let z = normal(rng);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

pub fn uniform(rng: &mut XRng) -> f64 {
    rng.random::<f64>()
}

pub fn below(rng: &mut XRng, n: usize) -> usize {
    rng.random_range(0..n)
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation(rng: &mut XRng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}
