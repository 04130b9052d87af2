//! Seeded, splittable randomness.
//!
//! Every stochastic routine takes a [`RandomSource`] explicitly. Parallel work
//! derives one child stream per task index so that results do not depend on
//! scheduling or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// A (master seed, stream id) pair naming one reproducible random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RandomSource {
    pub master_seed: u64,
    pub stream_id: u64,
}

// splitmix64 finalizer; a bijection on u64.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl RandomSource {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            stream_id: 0,
        }
    }

    /// Child source for `label`. For a fixed parent the map `label -> child`
    /// is injective.
    pub fn derive_stream(&self, label: u64) -> Self {
        let base = mix64(self.stream_id ^ 0x9e37_79b9_7f4a_7c15);
        Self {
            master_seed: self.master_seed,
            stream_id: mix64(base.wrapping_add(label)),
        }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Free-function form of [`RandomSource::derive_stream`].
pub fn derive_stream(rng: &RandomSource, label: u64) -> RandomSource {
    rng.derive_stream(label)
}
