//! Seeded random streams.
//!
//! Every stream is a `ChaCha8` generator (`rand_chacha::ChaCha8Rng`) whose
//! 64-bit seed is derived from a master seed and a path of stream labels by
//! repeated SplitMix64 finalization. Streams with different label paths are
//! independent, so work can be split across threads without changing output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes, used to turn string keys into stream labels.
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

pub fn derive_seed(master: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(mix64(master), |acc, l| mix64(acc ^ mix64(*l)))
}

pub fn stream(master: u64, labels: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, labels))
}

/// Stream labels used across the crate, kept here so no two subsystems
/// collide on the same path.
pub mod label {
    pub const SCENE_LAYOUT: u64 = 1;
    pub const SCENE_SWEEP: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const SAMPLER: u64 = 4;
    pub const ENCODER_INIT: u64 = 5;
    pub const VIEWPOINT: u64 = 6;
    pub const PROVIDER: u64 = 7;
    pub const HPR_AUGMENT: u64 = 8;
}
