//! Domain-separated deterministic random streams.
//!
//! A key's seed is expanded into independent streams (mask selection,
//! bucket assignment, fallback pairing) by hashing the seed together with a
//! domain label. Changing one stage's inputs never perturbs another stage.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub const MASK_DOMAIN: &str = "alien/mask/v1";
pub const BUCKET_DOMAIN: &str = "alien/bucket/v1";
pub const FALLBACK_DOMAIN: &str = "alien/fallback/v1";

/// A ChaCha20 stream keyed by `SHA-256(domain || 0x00 || seed_le || extra_le)`.
pub fn stream(seed: u64, domain: &str, extra: u64) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(domain.as_bytes());
    h.update([0u8]);
    h.update(seed.to_le_bytes());
    h.update(extra.to_le_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha20Rng::from_seed(digest)
}
