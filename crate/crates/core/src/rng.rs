//! Reproducible noise streams.
//!
//! Every random draw is addressed by `(master seed, trajectory, step,
//! channel)`. A generator is built for each address, so results never depend
//! on the order in which trajectories or steps are evaluated.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

/// Channel tags separating independent uses of the same step index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Channel {
    FluidFirstHalf = 1,
    FluidSecondHalf = 2,
    CosineFirstHalf = 3,
    CosineSecondHalf = 4,
    Additive = 5,
    Initial = 6,
    Perturbation = 7,
    Auxiliary = 8,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Hashes a sequence of words into a single 64-bit key.
pub fn mix_key(words: &[u64]) -> u64 {
    words
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, &w| splitmix64(acc ^ splitmix64(w)))
}

/// Noise source owned by one trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NoiseStream {
    pub master_seed: u64,
    pub trajectory: u64,
}

impl NoiseStream {
    pub fn new(master_seed: u64, trajectory: u64) -> Self {
        Self {
            master_seed,
            trajectory,
        }
    }

    /// Stream for trajectory `index` of an ensemble derived from `master_seed`.
    pub fn derive(master_seed: u64, index: u64) -> Self {
        Self::new(master_seed, index)
    }

    /// Sub-stream keyed by an extra tag (e.g. ensemble A vs B).
    pub fn fork(self, tag: u64) -> Self {
        Self::new(mix_key(&[self.master_seed, tag]), self.trajectory)
    }

    pub fn rng(&self, step: u64, channel: Channel) -> StreamRng {
        StreamRng::seed_from_u64(mix_key(&[
            self.master_seed,
            self.trajectory,
            step,
            channel as u64,
        ]))
    }

    pub fn initial_rng(&self) -> StreamRng {
        self.rng(u64::MAX, Channel::Initial)
    }
}
