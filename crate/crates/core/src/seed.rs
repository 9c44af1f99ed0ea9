//! Splittable seed derivation.
//!
//! Every stochastic component draws from its own `ChaCha8Rng`, seeded by
//! mixing a base seed with a stream tag. Streams never share state, so work
//! can be split across threads without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `base` for stream `stream`.
pub fn derive(base: u64, stream: u64) -> u64 {
    mix(mix(base) ^ stream.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Derive a child seed along a path of stream tags.
pub fn derive_path(base: u64, path: &[u64]) -> u64 {
    path.iter().fold(base, |acc, &s| derive(acc, s))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named stream tags used across the crate.
pub mod stream {
    pub const OUTCOME: u64 = 0x4f55_5443_4f4d_4500;
    pub const NOISE: u64 = 0x4e4f_4953_4500;
    pub const NOISE_LAYOUT: u64 = 0x4c41_594f_5554;
    pub const REGIME: u64 = 0x5245_4749_4d45;
    pub const COLUMN: u64 = 0x434f_4c55_4d4e;
    pub const TREE: u64 = 0x5452_4545;
    pub const DECODE: u64 = 0x4445_434f_4445;
}
