//! Seeded random streams.
//!
//! Every source of randomness is a PCG-XSH-RR 64/32 generator. One master
//! seed is split into independent streams per purpose (initialization,
//! dropout, shuffling, synthesis) and per index (fold, sample), so an entire
//! experiment is reproducible from a single integer.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg32;

/// What a derived stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Init,
    Dropout,
    Shuffle,
    Synth,
    Folds,
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Init => 1,
            Purpose::Dropout => 2,
            Purpose::Shuffle => 3,
            Purpose::Synth => 4,
            Purpose::Folds => 5,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a master seed, a purpose and an index.
pub fn derive_seed(master: u64, purpose: Purpose, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(purpose.tag())) ^ splitmix64(index.wrapping_add(0x5851_f42d)))
}

/// A PCG32 generator bound to one purpose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rng {
    inner: Pcg32,
}

impl Rng {
    /// Stream for `purpose` and `index`, derived from `master`.
    pub fn stream(master: u64, purpose: Purpose, index: u64) -> Self {
        let seed = derive_seed(master, purpose, index);
        Self {
            inner: Pcg32::new(seed, purpose.tag().wrapping_mul(2).wrapping_add(index << 8)),
        }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self {
            inner: Pcg32::seed_from_u64(seed),
        }
    }

    /// Uniform on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform on [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
