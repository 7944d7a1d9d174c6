//! Counter-based random streams.
//!
//! Every draw is addressed by `(seed, path, step, lane)`: the ChaCha key comes
//! from the seed, the stream id from the path index, and the word position
//! from the step index. Trajectories of an ensemble can therefore run on any
//! number of workers and still see exactly the same numbers.

use crate::scalar::Scalar;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Words reserved per step and lane (2^32 u32 words).
const STEP_SHIFT: u32 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Lane {
    Normals = 0,
    Uniforms = 1,
    Refine = 2,
}

const LANES: u64 = 3;

/// Keyed generator factory.
#[derive(Clone, Debug)]
pub struct CounterRng {
    seed: u64,
    key: [u8; 32],
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        let mut key = [0u8; 32];
        ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut key);
        Self { seed, key }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sequential generator for a whole sub-task (one chain, one sample).
    pub fn stream(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }

    fn at(&self, path: u64, step: u64, lane: Lane, offset: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(path.wrapping_mul(LANES).wrapping_add(lane as u64));
        rng.set_word_pos(((step as u128) << STEP_SHIFT) + offset as u128);
        rng
    }

    /// Standard normal increments for one step of one path.
    pub fn normals<S: Scalar>(&self, path: u64, step: u64, out: &mut [S]) {
        let mut rng = self.at(path, step, Lane::Normals, 0);
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o = S::c(z);
        }
    }

    /// Normals used to refine a step into two halves (Brownian bridge midpoint).
    pub fn refinement_normals<S: Scalar>(&self, path: u64, step: u64, level: u32, out: &mut [S]) {
        let mut rng = self.at(path, step, Lane::Refine, (level as u64) << 24);
        for o in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *o = S::c(z);
        }
    }

    /// Uniform in (0, 1] addressed by constraint index, for bridge minima.
    pub fn uniform(&self, path: u64, step: u64, sub: u32, index: usize) -> f64 {
        let offset = ((sub as u64) << 28) + 2 * index as u64;
        let mut rng = self.at(path, step, Lane::Uniforms, offset);
        let bits = rng.next_u64() >> 11;
        (bits as f64 + 1.0) * (1.0 / (1u64 << 53) as f64)
    }
}

/// Source of the Gaussian increments driving a trajectory.
pub trait NoiseSource<S: Scalar>: Sync {
    fn normals(&self, path: u64, step: u64, out: &mut [S]);
    fn refinement(&self, path: u64, step: u64, level: u32, out: &mut [S]);
    fn uniform(&self, path: u64, step: u64, sub: u32, index: usize) -> f64;
}

impl<S: Scalar> NoiseSource<S> for CounterRng {
    fn normals(&self, path: u64, step: u64, out: &mut [S]) {
        CounterRng::normals(self, path, step, out)
    }
    fn refinement(&self, path: u64, step: u64, level: u32, out: &mut [S]) {
        self.refinement_normals(path, step, level, out)
    }
    fn uniform(&self, path: u64, step: u64, sub: u32, index: usize) -> f64 {
        CounterRng::uniform(self, path, step, sub, index)
    }
}

/// Degenerate source: all increments zero, bridge uniforms equal to one
/// (so a bridge never dips below its endpoints).
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroNoise;

impl<S: Scalar> NoiseSource<S> for ZeroNoise {
    fn normals(&self, _: u64, _: u64, out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
    }
    fn refinement(&self, _: u64, _: u64, _: u32, out: &mut [S]) {
        out.iter_mut().for_each(|o| *o = S::zero());
    }
    fn uniform(&self, _: u64, _: u64, _: u32, _: usize) -> f64 {
        1.0
    }
}
