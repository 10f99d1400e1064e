//! Deterministic random-number substreams.
//!
//! Every random consumer derives its own generator from the root seed and a
//! `(purpose, objective, iteration)` key. Streams are mutually independent,
//! so adding a consumer or reordering estimator calls never perturbs the
//! draws seen by any other consumer.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derives the generator for one `(purpose, objective, iteration)` stream.
pub fn substream(root_seed: u64, purpose: &str, objective: usize, iteration: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(root_seed.to_le_bytes());
    hasher.update([0xff]);
    hasher.update(purpose.as_bytes());
    hasher.update([0xff]);
    hasher.update((objective as u64).to_le_bytes());
    hasher.update(iteration.to_le_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(seed)
}
