//! Deterministic, splittable random streams.
//!
//! Every stochastic step in the crate draws from a [`RandomStream`]. A stream
//! is identified by a 64-bit seed; [`RandomStream::split`] derives child
//! streams whose seeds depend only on the parent seed and the child index, so
//! work fanned out to threads stays reproducible regardless of scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha12Rng,
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of child `index` of a stream seeded with `seed`.
pub fn split_seed(seed: u64, index: u64) -> u64 {
    mix64(mix64(seed ^ 0x9E37_79B9_7F4A_7C15).wrapping_add(mix64(index.wrapping_add(1))))
}

pub fn seeded_rng(seed: u64) -> RandomStream {
    RandomStream::new(seed)
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent child stream; does not advance `self`.
    pub fn split(&self, index: u64) -> RandomStream {
        RandomStream::new(split_seed(self.seed, index))
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_with(&mut self, mean: f64, sd: f64) -> f64 {
        mean + sd * self.normal()
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Uniform integer on `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, len: usize, sd: f64) -> Vec<f64> {
        (0..len).map(|_| sd * self.normal()).collect()
    }
}
