//! Seed derivation. Every random draw in the crate comes from a ChaCha
//! stream keyed by a tuple of integers, so results do not depend on call
//! order or thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key tuple into a single 64-bit seed.
pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(GOLDEN, |acc, &p| {
        splitmix(acc.wrapping_add(GOLDEN) ^ splitmix(p))
    })
}

pub fn stream(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}

/// A standard normal draw fully determined by `parts`.
pub fn keyed_normal(parts: &[u64]) -> f64 {
    StandardNormal.sample(&mut stream(parts))
}

/// Hash of a string identifier, stable across runs and platforms.
pub fn str_key(s: &str) -> u64 {
    mix(&s.bytes().map(u64::from).collect::<Vec<_>>())
}
