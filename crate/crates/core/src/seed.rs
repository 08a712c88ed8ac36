//! Deterministic seed derivation.
//!
//! Every random stream in the crate is keyed by a base seed plus a tag and a
//! list of indices, so outputs are pure functions of `(seed, indices)` and do
//! not depend on the order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// Hash `(base, tag, parts)` down to a 64-bit seed.
pub fn derive(base: u64, tag: &str, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update((tag.len() as u64).to_le_bytes());
    h.update(tag.as_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

/// Same as [`derive`] but keyed by a string id (dataset or network ids).
pub fn derive_str(base: u64, tag: &str, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(tag.as_bytes());
    h.update([0u8]);
    h.update(id.as_bytes());
    let out = h.finalize();
    u64::from_le_bytes(out[..8].try_into().expect("sha256 output is 32 bytes"))
}

pub fn rng(base: u64, tag: &str, parts: &[u64]) -> Rng {
    Rng::seed_from_u64(derive(base, tag, parts))
}

pub fn rng_from(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Hex SHA-256 of a byte slice; used for artifact fingerprints.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let out = Sha256::digest(bytes);
    out.iter().map(|b| format!("{b:02x}")).collect()
}
