//! Deterministic seed derivation.
//!
//! Every random stream in the engine comes from a `(master seed, label)`
//! pair hashed with SHA-256, so results do not depend on the order in which
//! streams are created or on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type EngineRng = ChaCha8Rng;

pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 digest has 32 bytes"))
}

pub fn rng_from_seed(seed: u64) -> EngineRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(master: u64, label: &str) -> EngineRng {
    rng_from_seed(derive_seed(master, label))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn derivation_is_stable_and_label_sensitive() {
        assert_eq!(derive_seed(7, "victim"), derive_seed(7, "victim"));
        assert_ne!(derive_seed(7, "victim"), derive_seed(7, "shadow"));
        assert_ne!(derive_seed(7, "victim"), derive_seed(8, "victim"));
        let a: u64 = derived_rng(1, "x").gen();
        let b: u64 = derived_rng(1, "x").gen();
        assert_eq!(a, b);
    }
}
