//! Deterministic RNG stream derivation.
//!
//! Every random draw in this crate comes from a ChaCha8 stream derived from a
//! master seed plus a tag path, e.g. `(seed, SPLIT, iteration)`. Streams for
//! distinct tag paths are independent, so work items can run in any order (or
//! in parallel) without changing results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tag namespaces for derived streams. One per random consumer.
pub mod stream {
    pub const SPLIT: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const TREE: u64 = 3;
    pub const MDA: u64 = 4;
    pub const CANDIDATES: u64 = 5;
    pub const KFOLD: u64 = 6;
    pub const CV_FIT: u64 = 7;
    pub const HALVING_SUBSAMPLE: u64 = 8;
    pub const HALVING_ROUND_CV: u64 = 9;
    pub const TUNE: u64 = 10;
    pub const FIT: u64 = 11;
    pub const MDA_EVAL: u64 = 12;
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Collapse `(seed, tags...)` into a single avalanched u64. Order-sensitive:
/// `[a, b]` and `[b, a]` derive different values, as do prefixes.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut acc = mix(seed ^ 0x6A09_E667_F3BC_C909);
    for &tag in tags {
        acc = mix(acc.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(mix(tag)));
    }
    acc
}

/// ChaCha8 stream for `(seed, tags...)`.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = derive_seed(seed, tags);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        chunk.copy_from_slice(&mix(state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
