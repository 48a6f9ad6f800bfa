//! Seeded random-number streams.
//!
//! All sampling in this crate takes an explicit 64-bit seed. Sub-streams for
//! composed or parallel work are derived deterministically with a splittable
//! mix, so no global RNG state exists anywhere.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Deterministic RNG stream for a named seed.
pub fn stream(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from a parent seed and a stream index.
///
/// splitmix64 finalizer; distinct `(seed, index)` pairs give well-separated
/// streams.
pub fn derive(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(index.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
