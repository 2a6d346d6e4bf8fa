//! Seeded random streams.
//!
//! Every random decision in a run draws from a [`ChaCha8Rng`] whose seed is a
//! SHA-256 hash of the master seed, a domain label and a list of indices
//! (generation, slot, repeat...). Streams never share state, so the outcome
//! does not depend on evaluation or scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(master_seed: u64, domain: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(master_seed, domain, indices))
}

pub fn derive_seed(master_seed: u64, domain: &str, indices: &[u64]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(master_seed.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    h.finalize().into()
}

/// First eight bytes of [`derive_seed`] as an integer.
pub fn derive_u64(master_seed: u64, domain: &str, indices: &[u64]) -> u64 {
    let bytes = derive_seed(master_seed, domain, indices);
    u64::from_le_bytes(bytes[..8].try_into().unwrap())
}

pub fn hex_digest(data: &[u8]) -> String {
    Sha256::digest(data).iter().map(|b| format!("{b:02x}")).collect()
}
