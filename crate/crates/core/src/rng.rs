//! Seeded random streams.
//!
//! Every random decision in the engine draws from a ChaCha stream whose seed
//! is derived from a global seed plus a list of labels (sentence id, strategy,
//! copy index, ...). Streams for different sentences are independent, so
//! processing order and worker count never change the output.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Derive a 64-bit seed from a global seed and a sequence of labels.
pub fn derive_seed(global: u64, labels: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    for label in labels {
        hasher.update((label.len() as u64).to_le_bytes());
        hasher.update(label.as_bytes());
    }
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn stream(global: u64, labels: &[&str]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(global, labels))
}

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
