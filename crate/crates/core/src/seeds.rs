//! One run seed fanned out into independent random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Canonical split seeds used for the three-run protocol.
pub const CANONICAL_SEEDS: [u64; 3] = [8, 12, 14];

/// Independent purposes that draw randomness from a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split = 0,
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    Topics = 4,
    Fixture = 5,
}

/// Returns the generator for `stream` under `seed`.
///
/// Streams never overlap: ChaCha stream ids partition the keystream of a
/// single key, so the split stream of seed 8 is unaffected by how many
/// dropout masks a training run draws.
pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
