//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 (`rand_chacha`), seeded
//! with `seed_from_u64` and split into independent streams with
//! `set_stream`. ChaCha8 output is specified bit-for-bit, so golden values
//! recorded on one platform hold on every other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream ids. Distinct purposes never share a stream for the same seed.
pub mod stream {
    pub const ENVIRONMENT: u64 = 1;
    pub const NETWORK_INIT: u64 = 2;
    pub const EXPLORATION: u64 = 3;
    pub const EPISODE: u64 = 4;
    pub const BATCH: u64 = 5;
    pub const LIDAR_NOISE: u64 = 6;
    pub const ACTOR_NOISE: u64 = 7;
}

pub fn rng_for(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives a child seed, e.g. one per environment or per evaluation run.
pub fn child_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
