//! Named seed derivation. Every random stream in the crate is a ChaCha
//! generator keyed by `derive(root, label)`, so components can be re-seeded
//! independently without perturbing each other.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

pub fn derive(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    derive(derive(root, label), &index.to_string())
}

pub fn rng(root: u64, label: &str) -> Rng {
    Rng::seed_from_u64(derive(root, label))
}

pub fn rng_indexed(root: u64, label: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_indexed(root, label, index))
}

/// Hex SHA-256 of a byte string; used for artifact checksums.
pub fn checksum(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
