//! Deterministic random-stream derivation.
//!
//! Stream seeds are `SHA-256("bpdl.seed.v1" || master_le || replica_le ||
//! label_len_le || label_utf8)`, with all integers as little-endian
//! `u64` bytes. Any implementation of SHA-256 reproduces the same replica
//! partition; bit-identical generator output across languages is not
//! promised, only the derivation of the 32-byte seeds.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

const DOMAIN_TAG: &[u8] = b"bpdl.seed.v1";

/// 32-byte stream seed for (master, replica, label).
pub fn derive_seed(master: u64, replica: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(DOMAIN_TAG);
    hasher.update(master.to_le_bytes());
    hasher.update(replica.to_le_bytes());
    hasher.update((label.len() as u64).to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

/// Seeded generator for one stream.
pub fn stream_rng(master: u64, replica: u64, label: &str) -> ChaCha12Rng {
    ChaCha12Rng::from_seed(derive_seed(master, replica, label))
}
