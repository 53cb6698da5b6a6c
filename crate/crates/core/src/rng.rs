//! Deterministic RNG stream derivation.
//!
//! Every independent computation (an EM restart, a CV fold, one arm of one episode)
//! owns a `ChaCha8Rng` derived from a master seed and a path of stream labels, so
//! results never depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The RNG used throughout the crate. ChaCha output is platform independent.
pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from `seed` and a stream label.
pub fn derive_seed(seed: u64, label: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// Returns an RNG for the stream `labels` under `seed`.
pub fn stream(seed: u64, labels: &[u64]) -> StreamRng {
    let s = labels.iter().fold(seed, |acc, &l| derive_seed(acc, l));
    StreamRng::seed_from_u64(s)
}
