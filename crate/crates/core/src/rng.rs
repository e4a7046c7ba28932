//! Named random substreams derived from a single master seed.
//!
//! Every consumer of randomness (fold assignment, noise injection, SGD
//! shuffling, Monte-Carlo sign draws) asks for its own stream by name, so
//! adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

/// Returns the generator for substream `name` of `seed`.
pub fn substream(seed: u64, name: &str) -> StreamRng {
    indexed_substream(seed, name, 0)
}

/// Returns the generator for item `index` of substream `name`.
///
/// Used where work is split into independent units (one per Monte-Carlo
/// draw, one per grid cell) that may run in any order.
pub fn indexed_substream(seed: u64, name: &str, index: u64) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

/// Returns the generator keyed by several indices, e.g. `(draw, example)`.
pub fn keyed_substream(seed: u64, name: &str, keys: &[u64]) -> StreamRng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update((keys.len() as u64).to_le_bytes());
    for k in keys {
        hasher.update(k.to_le_bytes());
    }
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha8Rng::from_seed(digest)
}
