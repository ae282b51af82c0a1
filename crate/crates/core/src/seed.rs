//! Deterministic seed derivation so that work split across components or
//! chains draws from independent streams regardless of execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive(seed: u64, stream: &[u64]) -> u64 {
    stream.iter().fold(mix(seed), |acc, &s| mix(acc ^ mix(s)))
}

pub fn rng(seed: u64, stream: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}
