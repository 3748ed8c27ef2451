//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream derived from a
//! master seed plus a tuple of integer keys, so results never depend on how
//! trials get scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream for `seed` selected by `keys`. Distinct key tuples give
/// independent streams.
pub fn substream(seed: u64, keys: &[u64]) -> Stream {
    let mut id = 0x5eed_u64;
    for &k in keys {
        id = splitmix(id ^ splitmix(k));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Named purposes, used as the first key of a substream.
pub mod purpose {
    pub const MODEL: u64 = 1;
    pub const DATA: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const TEST: u64 = 4;
    pub const NOISE: u64 = 5;
    pub const INIT: u64 = 6;
    pub const FUZZ: u64 = 7;
    pub const RADEMACHER: u64 = 8;
}
