//! Per-replicate random streams.
//!
//! Replicate `r` of a study seeded with `seed` draws from a ChaCha8 stream
//! keyed by a SplitMix64 mix of `(seed, r)`. Streams do not depend on which
//! worker runs the replicate, so results are identical for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stream for replicate `rep` of a study seeded with `seed`.
pub fn rep_stream(seed: u64, rep: u64) -> Stream {
    let key = splitmix64(seed ^ splitmix64(rep.wrapping_add(0x5EED)));
    ChaCha8Rng::seed_from_u64(key)
}
