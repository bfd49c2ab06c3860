//! Counter-based stream derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by
//! `(master seed, domain, a, b)`. Streams are independent of how many nodes
//! exist or which thread asks for them, so a node's sequence depends only on
//! its own id and the step counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tag mixed into the stream key so unrelated consumers never share
/// a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Domain {
    Design = 1,
    TrueModel = 2,
    Noise = 3,
    Partition = 4,
    Batch = 5,
    Compress = 6,
    NetworkInit = 7,
    SecondMoment = 8,
    Probe = 9,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the stream for `(seed, domain, a, b)`.
pub fn stream(seed: u64, domain: Domain, a: u64, b: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let words = [
        splitmix64(&mut state) ^ (domain as u64).wrapping_mul(0xD1B5_4A32_D192_ED03),
        splitmix64(&mut state) ^ a.wrapping_mul(0xABC9_8388_FB8F_AC03),
        splitmix64(&mut state) ^ b.wrapping_mul(0x8CB9_2BA7_2F3D_8DD7),
        splitmix64(&mut state),
    ];
    // One more mixing round so that nearby (a, b) pairs land far apart.
    for (i, w) in words.iter().enumerate() {
        let mut s = *w;
        let mixed = splitmix64(&mut s);
        key[i * 8..(i + 1) * 8].copy_from_slice(&mixed.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
