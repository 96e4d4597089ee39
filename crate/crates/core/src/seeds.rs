//! Deterministic sub-seed derivation.
//!
//! Every phase of the pipeline draws from its own RNG stream so that adding
//! or reordering phases never perturbs the others. Streams are derived by
//! hashing the base seed with a stable tag.

use sha2::{Digest, Sha256};

/// Derives a stable sub-seed from `(base, tag)`.
pub fn derive_seed(base: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Derives a stable sub-seed indexed by an integer (capability, seed index).
pub fn derive_seed_indexed(base: u64, tag: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update(tag.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
