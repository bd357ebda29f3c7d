//! Seeded random streams.
//!
//! Every stochastic routine draws from a stream identified by
//! `(master_seed, stream_index)`. Streams are independent ChaCha8 keystreams
//! sharing a key, so work can be split across threads in any order without
//! changing any individual draw.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream(master_seed: u64, index: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// The pair of streams owned by one simulated path: `flow` drives the
/// Brownian and small-jump increments, `jumps` drives the large-jump
/// Poisson clock and marks.
#[derive(Clone, Debug)]
pub struct PathStreams {
    pub flow: StreamRng,
    pub jumps: StreamRng,
}

impl PathStreams {
    pub fn new(master_seed: u64, path_index: u64) -> Self {
        Self {
            flow: stream(master_seed, 2 * path_index),
            jumps: stream(master_seed, 2 * path_index + 1),
        }
    }
}

/// Derive a child seed for an independent sub-experiment.
pub fn child_seed(master_seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = master_seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
