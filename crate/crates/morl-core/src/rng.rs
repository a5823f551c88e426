//! Deterministic random-number plumbing.
//!
//! Everything in this crate takes explicit, seeded randomness. A single run
//! derives independent streams (hazard placement, training, evaluation,
//! baselines) from one master seed so that adding draws to one stream never
//! perturbs another.

pub use rand_chacha::ChaCha8Rng;

use rand::SeedableRng;

/// splitmix64 finalizer; used to derive decorrelated child seeds.
pub fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A ChaCha stream for a derived purpose, e.g. `stream(seed, TAG_EVAL, step)`.
pub fn stream(seed: u64, salt: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed, salt), index))
}

/// A ChaCha stream keyed by two indices.
pub fn stream2(seed: u64, salt: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed, salt), a), b))
}

pub const TAG_HAZARDS: u64 = 0x01;
pub const TAG_SPECGEN: u64 = 0x02;
pub const TAG_INIT: u64 = 0x03;
pub const TAG_TRAIN: u64 = 0x04;
pub const TAG_EVAL: u64 = 0x05;
pub const TAG_BASELINE: u64 = 0x06;
pub const TAG_FINGERPRINT: u64 = 0x07;
