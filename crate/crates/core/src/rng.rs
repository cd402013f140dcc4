//! Seeded random streams.
//!
//! Every random decision in a run derives from one user seed. Each consumer
//! draws from its own ChaCha stream so that, e.g., changing the validation
//! fraction does not shift the initialization draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// Independent sub-streams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split,
    Init,
    Shuffle,
    Dropout,
    /// Free-form streams for tests, gradcheck and synthetic data.
    Aux(u64),
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Split => 1,
            Stream::Init => 2,
            Stream::Shuffle => 3,
            Stream::Dropout => 4,
            Stream::Aux(n) => 0x1000 + n,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> RunRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}
