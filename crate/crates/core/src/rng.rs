//! Named random sub-streams derived from a single run seed.
//!
//! Each component draws from its own ChaCha stream so that changing how
//! often one component consumes randomness never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies an independent random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Env,
    PolicyNoise,
    Exploration,
    Replay,
    Eval,
    Warmup,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Env => 2,
            Stream::PolicyNoise => 3,
            Stream::Exploration => 4,
            Stream::Replay => 5,
            Stream::Eval => 6,
            Stream::Warmup => 7,
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which.id());
    rng
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
