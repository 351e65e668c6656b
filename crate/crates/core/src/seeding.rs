//! Deterministic derivation of per-task RNGs from one root seed, so
//! experiment trials can run in any order (or in parallel) and still
//! reproduce bit-for-bit.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 step; good avalanche, cheap, stable across platforms.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a root seed with a list of tags (trial index, sweep value, ...)
/// into an independent stream seed.
pub fn derive_seed(root: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(root);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// RNG for a derived stream.
pub fn derived_rng(root: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, tags))
}

/// RNG straight from the root seed.
pub fn root_rng(root: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(root)
}
