//! Seeded generators. Every experiment draws from one ChaCha stream, so runs
//! are reproducible bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ExperimentRng = ChaCha8Rng;

pub fn experiment_rng(seed: u64) -> ExperimentRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of `seed`; used where a draw must depend only
/// on `(seed, index)`, e.g. the `k`-th cost function of a scheduler.
pub fn indexed_rng(seed: u64, stream: u64) -> ExperimentRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
