//! Seeded random sub-streams.
//!
//! Every random draw in the pipeline comes from one run seed split into
//! named ChaCha streams, so changing how one stage consumes randomness
//! never shifts another stage's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Dropout,
    DataShuffle,
    Synthetic,
    GradCheck,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Dropout => 2,
            Stream::DataShuffle => 3,
            Stream::Synthetic => 4,
            Stream::GradCheck => 5,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
