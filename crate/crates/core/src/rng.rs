//! Seeded random streams.
//!
//! A run owns a single seed. Each consumer (parameter init, dropout, noise
//! injection, shuffling, synthetic data) draws from its own ChaCha stream so
//! that adding draws in one place never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random consumers of one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Dropout = 2,
    Noise = 3,
    Shuffle = 4,
    Synth = 5,
    Probe = 6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeed(pub u64);

impl RunSeed {
    pub fn stream(self, which: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(which as u64);
        rng
    }
}
