//! Keyed random substreams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose seed is
//! derived from a base seed and a path of keys, e.g. `(seed, REPETITION, rep)`
//! or `(seed, KNOCKOFF, j)`. Work items therefore draw the same numbers no
//! matter which thread runs them or in which order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SPLIT: u64 = 0x5350_4c49;
pub const STREAM_FOREST: u64 = 0x464f_5245;
pub const STREAM_KNOCKOFF: u64 = 0x4b4e_4f43;
pub const STREAM_FEATURES: u64 = 0x4645_4154;
pub const STREAM_NOISE: u64 = 0x4e4f_4953;
pub const STREAM_REPETITION: u64 = 0x5245_5045;
pub const STREAM_HOLDOUT: u64 = 0x484f_4c44;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a key path into a base seed.
pub fn derive_seed(seed: u64, keys: &[u64]) -> u64 {
    keys.iter()
        .fold(splitmix64(seed), |h, &k| splitmix64(h ^ splitmix64(k)))
}

pub fn substream(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, keys))
}
