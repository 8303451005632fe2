//! Per-stage seeds derived from one global seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Seed for the stage named `label`: the first eight bytes of
/// `SHA-256(global_le || label)`.
pub fn derive_seed(global: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate_streams() {
        assert_eq!(derive_seed(42, "split"), derive_seed(42, "split"));
        assert_ne!(derive_seed(42, "split"), derive_seed(42, "resample"));
        assert_ne!(derive_seed(42, "split"), derive_seed(43, "split"));
    }
}
