//! Seed derivation for reproducible random streams.
//!
//! Every random stream in the crate is a ChaCha8 generator whose 64-bit seed
//! is derived from a user seed and a stream identifier with the SplitMix64
//! finalizer. Streams are therefore independent of each other, of thread
//! scheduling and of the platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags separating the uses of one user seed.
pub mod stream {
    pub const PARAM_INIT: u64 = 0x5041_5241_4d53;
    pub const SHUFFLE: u64 = 0x5348_5546_464c;
    pub const SCENE: u64 = 0x5343_454e_45;
    pub const GRADCHECK: u64 = 0x4752_4144;
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of substream `index` of stream `tag` under `seed`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index)
}

pub fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, index))
}
