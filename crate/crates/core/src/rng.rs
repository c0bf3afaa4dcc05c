//! Deterministic seed derivation.
//!
//! Every stochastic routine takes a `u64` seed and derives child streams with
//! [`derive_seed`], so results never depend on evaluation order or on how many
//! siblings a stream has.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Child seed number `stream` of `seed`.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}
