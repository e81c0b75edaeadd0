//! Named random substreams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type Rng = ChaCha8Rng;

/// A generator keyed by `(seed, name)`; distinct names give independent streams.
pub fn substream(seed: u64, name: &str) -> Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest[..32]);
    ChaCha8Rng::from_seed(key)
}
