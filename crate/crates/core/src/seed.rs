//! Seed derivation. Every random stream is keyed by a root seed plus a
//! stable label, so adding a new consumer never shifts existing streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Stable 64-bit sub-seed for `label` under `root`.
pub fn derive(root: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Sub-seed for the `index`-th member of a labelled family.
pub fn derive_indexed(root: u64, label: &str, index: u64) -> u64 {
    derive(root, &format!("{label}/{index}"))
}

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_for(root: u64, label: &str) -> Rng {
    rng(derive(root, label))
}
