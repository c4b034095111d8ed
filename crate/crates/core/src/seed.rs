//! Counter-based seed splitting.
//!
//! One 64-bit root seed fans out into independent streams keyed by a purpose
//! tag and an index, so layer init, shuffling, replay selection and noise draws
//! never share RNG state and can each be reproduced in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for derived streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Replay = 3,
    Perturbation = 4,
    Dataset = 5,
    Probe = 6,
    ClassOrder = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive the seed for `(stream, index)` under `root`.
pub fn derive(root: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(root ^ splitmix64(stream as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0xA5A5_A5A5)))
}

pub fn rng(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, stream, index))
}
