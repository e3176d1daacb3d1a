//! Seed derivation for independent, order-insensitive random streams.
//!
//! Every replicate (or simulation block) gets its own ChaCha generator whose
//! seed is a hash of the base seed and the replicate counter, so results do
//! not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for substream `index` of `base`.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(base ^ splitmix64(index))
}

pub fn rng_from_seed(seed: u64) -> StreamRng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Generator for substream `index` of `base`.
pub fn stream(base: u64, index: u64) -> StreamRng {
    rng_from_seed(derive_seed(base, index))
}
