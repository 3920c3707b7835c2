//! Seeded random streams. Each consumer draws from its own ChaCha stream so
//! adding draws in one place never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type DuetRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RngStream {
    /// Non-embedding weight initialization.
    Weights = 0,
    /// Embedding rows not covered by a pretrained file.
    Embedding = 1,
    Dropout = 2,
    Shuffle = 3,
}

pub fn stream_rng(seed: u64, stream: RngStream) -> DuetRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
