//! Deterministic random streams.
//!
//! Every random decision in the library draws from a ChaCha stream keyed by
//! `(seed, stream)`, so independent consumers of one trial seed never share
//! state and results do not depend on call order across consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream identifiers used across the crate.
pub mod streams {
    pub const GENERATE: u64 = 1;
    pub const FRACTIONS: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const TARGET_SPLIT: u64 = 4;
    pub const SVM: u64 = 5;
    pub const ACTIVE: u64 = 6;
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for a sub-task `index` within a stream, e.g. the split of source `k`.
pub fn sub_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
