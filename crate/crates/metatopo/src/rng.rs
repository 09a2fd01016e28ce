//! Deterministic random streams.
//!
//! All randomness flows from one root seed through named substreams, so each
//! component (task generation, network init, meta batching, per-task state)
//! is independently reproducible.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Deterministic RNG derived from `(root, name)`. Distinct names give
/// statistically independent streams; the same pair always yields the same
/// stream on every platform.
pub fn substream(root: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(b"/");
    hasher.update(name.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
