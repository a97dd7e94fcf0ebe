//! Named random streams split from one master seed.
//!
//! Each subsystem draws from its own ChaCha stream, so extra draws in one
//! place never shift the sequence seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Class prototypes, example features and boxes.
    Data,
    /// Parameter initialization.
    Init,
    /// Mini-batch order during representation learning.
    Batch,
    /// Mini-batch order during classifier learning.
    FineTuneBatch,
    /// Dense-proposal offsets and proposal feature jitter.
    BoxGen,
    /// Class selection for hallucination.
    FhmSelect,
    /// Reparametrization noise for hallucinated features.
    FhmNoise,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Data => 1,
            Stream::Init => 2,
            Stream::Batch => 3,
            Stream::FineTuneBatch => 4,
            Stream::BoxGen => 5,
            Stream::FhmSelect => 6,
            Stream::FhmNoise => 7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, which: Stream) -> StreamRng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(which.id());
        rng
    }
}
