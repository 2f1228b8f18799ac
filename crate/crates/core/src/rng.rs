//! Seed derivation for reproducible, thread-count independent generation.
//!
//! `sample_seed = splitmix64(master_seed ^ splitmix64(index))`. Within a
//! sample, ChaCha8 streams are fixed: [`TRANSFORM_STREAM`] draws transform
//! kinds then their parameters, [`MASK_STREAM`] draws the mask.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TRANSFORM_STREAM: u64 = 1;
pub const MASK_STREAM: u64 = 2;

/// The splitmix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_seed(master_seed: u64, index: u64) -> u64 {
    splitmix64(master_seed ^ splitmix64(index))
}

/// A ChaCha8 generator on a numbered stream of `seed`.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}
