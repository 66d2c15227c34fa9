//! Hierarchical seed derivation.
//!
//! Every random stream in an experiment is addressed by a path such as
//! `(master_seed, "noise", trial, key)`; the path is hashed with SHA-256 so
//! that any sub-stream can be regenerated in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a 64-bit seed from a parent seed, a purpose label and indices.
pub fn derive(parent: u64, purpose: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// ChaCha8 generator for a derived stream.
pub fn rng(parent: u64, purpose: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(parent, purpose, indices))
}
