//! Named RNG substreams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Perturb = 3,
    Augment = 4,
    Eval = 5,
}

/// Independent generator for `stream` under `seed`.
pub fn stream(seed: u64, s: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s as u64);
    rng
}

/// Same as [`stream`] but with an extra index folded in, e.g. a scene number.
pub fn indexed(seed: u64, s: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(s as u64);
    rng
}
