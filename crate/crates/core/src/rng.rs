//! Seeded random streams.
//!
//! Every sampler in the crate takes an explicit `&mut impl Rng`. Reproducible
//! fan-out (training examples, chains, folds) derives independent ChaCha
//! streams from a `(seed, stream)` pair so that any index can be regenerated
//! without replaying earlier ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn stream(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Plain seeded generator.
pub fn seeded(seed: u64) -> StreamRng {
    ChaCha8Rng::seed_from_u64(seed)
}
