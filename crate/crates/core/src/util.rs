//! Deterministic RNG construction and seed derivation.
//!
//! Every random choice in the crate flows through a ChaCha8 stream seeded
//! from a user-visible `u64`. Independent purposes (init, clustering,
//! batching, ...) derive their own seeds so that changing the consumption
//! pattern of one stream can never perturb another.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// SplitMix64 finalizer; a cheap, well-distributed u64 -> u64 mixer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derive an independent seed for a tagged purpose from a base seed.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag))
}

/// The crate-wide deterministic RNG.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
