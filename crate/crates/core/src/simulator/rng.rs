//! Named random streams: every (platform, sensor) pair draws from its own
//! generator derived from the scenario seed and the stream name, so adding
//! or removing one sensor never shifts another sensor's noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ fnv1a(name))
}

pub fn named_stream(seed: u64, name: &str) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(seed, name))
}
