//! Seeded randomness used for generated weights and `verify` inputs.
//!
//! The generator is SplitMix64 so that a seed reproduces the same values on
//! every platform.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use crate::bitserial::Precision;

pub type SeededRng = SplitMix64;

pub fn seeded(seed: u64) -> SeededRng {
    SplitMix64::seed_from_u64(seed)
}

/// Derives an independent stream for item `index` of a seeded family.
pub fn derive(seed: u64, index: u64) -> SeededRng {
    let mut base = seeded(seed ^ 0x6a09_e667_f3bc_c909);
    for _ in 0..(index % 4) {
        base.random::<u64>();
    }
    seeded(base.random::<u64>().wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// `n` uniform values over the full range of `precision`.
pub fn values_in(rng: &mut SeededRng, precision: Precision, n: usize) -> Vec<i64> {
    (0..n).map(|_| rng.random_range(precision.min_value()..=precision.max_value())).collect()
}
