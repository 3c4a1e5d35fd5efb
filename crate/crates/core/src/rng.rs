//! Seeded randomness.
//!
//! Every stochastic operation in this crate takes an explicit 64-bit seed and
//! draws from a [`ChaCha8Rng`] built by [`rng_from_seed`]. ChaCha8's output
//! stream for a given seed is fixed by the algorithm itself, so results are
//! reproducible across runs, platforms, and dependency upgrades.
//!
//! Sub-streams (one per training round, per k-means restart, ...) are derived
//! with [`derive_seed`], a SplitMix64 mix of the base seed and a stream index.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Builds the crate's generator for a seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent sub-seed from a base seed and a stream index.
///
/// SplitMix64 finalizer applied to `base + (stream + 1) * golden_gamma`;
/// distinct streams give statistically independent generators.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
