//! Per-shot random streams.
//!
//! Every shot draws from its own ChaCha8 stream: the key is derived from the
//! master seed and the stream id is the shot index, so a shot's randomness
//! depends only on `(master_seed, shot_index)` and never on the order in
//! which shots are executed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ShotRng = ChaCha8Rng;

/// Stream for shot `index` under `master_seed`.
pub fn shot_rng(master_seed: u64, index: u64) -> ShotRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Stream for a labelled sub-experiment (e.g. a sweep pixel), keeping the
/// shot index as the stream id.
pub fn labelled_rng(master_seed: u64, label: u64, index: u64) -> ShotRng {
    shot_rng(splitmix64(master_seed ^ splitmix64(label)), index)
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
