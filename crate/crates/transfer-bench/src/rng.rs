//! Seeded randomness. Every random choice in the crate flows from one global
//! seed through named sub-streams, so each component (data generation, weight
//! init, shuffling, attack sampling) is independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive the seed of a named sub-stream from a global seed.
pub fn stream_seed(global: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// RNG for a named sub-stream of a global seed.
pub fn stream_rng(global: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(global, name))
}
