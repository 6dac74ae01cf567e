//! Counter-keyed random streams.
//!
//! A draw is addressed by `(seed, index, channel)`: the seed of a rollout,
//! the time index, and which noise source is being sampled. Each address
//! gets its own ChaCha8 generator, so the values never depend on the order
//! in which rollouts or controllers are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Noise source tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    Process = 1,
    Measurement = 2,
    MomentEstimate = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_key(seed: u64, index: u64, channel: Channel) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ index) ^ channel as u64)
}

pub fn stream(seed: u64, index: u64, channel: Channel) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_key(seed, index, channel))
}
