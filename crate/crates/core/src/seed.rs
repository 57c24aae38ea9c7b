//! Named-stream seed derivation.
//!
//! All randomness in a run flows from one global seed. Sub-streams are
//! addressed by name (problem id, trace id, ...) so that concurrent
//! scheduling cannot perturb which random numbers a given trace sees.

use sha2::{Digest, Sha256};

/// Derives a child seed from a global seed and a path of stream names.
pub fn derive_seed(global: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    for part in parts {
        hasher.update([0u8]);
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
