//! Seeded random streams.
//!
//! Every stochastic step draws from a ChaCha stream keyed by the global seed
//! plus a purpose tag and the identifiers of the actor involved, so results do
//! not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Purpose tags separating independent streams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Cluster = 1,
    Split = 2,
    Publish = 3,
    Neighbors = 4,
    Init = 5,
    Sampling = 6,
    LocalTrain = 7,
    EvalCandidates = 8,
    Synth = 9,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a seed with a list of stream coordinates into a single 64-bit key.
pub fn stream_key(seed: u64, purpose: Purpose, coords: &[u64]) -> u64 {
    let mut h = splitmix64(seed ^ splitmix64(purpose as u64));
    for &c in coords {
        h = splitmix64(h ^ splitmix64(c.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn stream(seed: u64, purpose: Purpose, coords: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_key(seed, purpose, coords))
}
