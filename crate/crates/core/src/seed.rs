//! Seed fan-out.
//!
//! A run carries one root seed. Every consumer of randomness (a rollout
//! worker, an evaluation batch, a verifier) derives its own ChaCha stream
//! from `(root, component name, index)`, so the values it sees never depend
//! on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// 64-bit FNV-1a. Stable across platforms and compiler versions.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed of the stream `index` of `component` under `root`.
pub fn stream_seed(root: u64, component: &str, index: u64) -> u64 {
    let tag = fnv1a64(component.as_bytes());
    splitmix64(root ^ splitmix64(tag ^ splitmix64(index)))
}

pub fn stream(root: u64, component: &str, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(stream_seed(root, component, index))
}
