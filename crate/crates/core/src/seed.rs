//! Counter-based seed derivation.
//!
//! Every random draw in the crate is keyed by a tuple of counters mixed into
//! a 64-bit seed, so results do not depend on scheduling or on how many
//! other draws happened before.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed and a list of counters.
pub fn derive(seed: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(mix64(seed), |acc, &c| mix64(acc ^ mix64(c)))
}

/// Uniform draw in `[0, 1)` for the given counter tuple.
#[inline]
pub fn uniform(seed: u64, counters: &[u64]) -> f64 {
    (derive(seed, counters) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A ChaCha generator keyed by `(seed, counters)`.
pub fn rng(seed: u64, counters: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, counters))
}

/// Stable tags for the different consumers of randomness.
pub mod tag {
    pub const SYNTH_LABEL: u64 = 0x4c41_4245_4c00_0001;
    pub const SYNTH_FEATURE: u64 = 0x4645_4154_0000_0002;
    pub const STEP: u64 = 0x5354_4550_0000_0003;
    pub const ACTIVE: u64 = 0x4143_5449_5645_0004;
    pub const PERMUTATION: u64 = 0x5045_524d_0000_0005;
    pub const EAP_HOLDOUT: u64 = 0x4541_5048_0000_0006;
}
