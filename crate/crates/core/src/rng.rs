//! Seeded, counter-based random streams.
//!
//! Every stream is a ChaCha8 keystream keyed by the master seed and selected
//! by a 64-bit stream id, so stream `k` is available in O(1) without touching
//! streams `0..k`. Experiments hand one stream to each replicate and never
//! share a stream between threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The random-number stream type used throughout the crate.
pub type Stream = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedSpec {
    pub master_seed: u64,
    pub stream_index: u64,
}

impl SeedSpec {
    pub const fn new(master_seed: u64, stream_index: u64) -> Self {
        Self {
            master_seed,
            stream_index,
        }
    }

    /// The stream for replicate `offset`, counted from this seed's index.
    pub const fn replicate(self, offset: u64) -> Self {
        Self::new(self.master_seed, self.stream_index.wrapping_add(offset))
    }

    /// Re-keys the master seed for an independent purpose (initial points,
    /// per-`n` Monte-Carlo tables, ...). Stream indices are preserved.
    pub const fn domain(self, tag: u64) -> Self {
        Self::new(
            splitmix64(self.master_seed ^ splitmix64(tag)),
            self.stream_index,
        )
    }

    pub fn stream(self) -> Stream {
        derive_stream(self)
    }
}

/// Creates the deterministic stream selected by `seed`.
pub fn derive_stream(seed: SeedSpec) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.master_seed);
    rng.set_stream(seed.stream_index);
    rng
}

const fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
