//! Deterministic per-component RNG derivation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent 32-byte seed from a master seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(label.as_bytes());
    hasher.finalize().into()
}

pub fn derived_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_seed(seed, label))
}

/// Picks an index from non-negative weights by inverse CDF.
/// Zero-weight entries are never chosen.
pub(crate) fn categorical<R: Rng + ?Sized>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        last_positive = i;
        acc += w;
        if target < acc {
            return i;
        }
    }
    last_positive
}
