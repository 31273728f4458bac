//! Named, seeded random substreams.
//!
//! Every stochastic stage draws from a ChaCha stream whose seed is derived
//! from the root seed, a stage tag and a list of indices, so stages can be
//! rerun independently and parallel workers never share a stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic seed for `(root, tag, indices)`.
pub fn derive_seed(root: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut h = splitmix(root);
    for b in tag.bytes() {
        h = splitmix(h ^ u64::from(b));
    }
    for &i in indices {
        h = splitmix(h ^ i.wrapping_mul(0x2545_F491_4F6C_DD1D));
    }
    h
}

pub fn stream(root: u64, tag: &str, indices: &[u64]) -> Rng {
    Rng::seed_from_u64(derive_seed(root, tag, indices))
}

pub fn from_seed(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
