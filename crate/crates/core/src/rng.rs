//! Seeded Gaussian noise.
//!
//! The stream is ChaCha8 keyed by the 64-bit seed (a counter-based generator,
//! so the position in the stream is a block counter), and normals come from
//! the ziggurat transform in `rand_distr`. Both are deterministic, so one seed
//! always yields the same sequence of tensors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::{ImageTensor, Shape};

#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for a parallel worker.
    pub fn split(&self, worker: u64) -> Self {
        Self::new(self.seed ^ worker)
    }

    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform draw on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.rng.random::<f64>()
    }

    /// Tensor of i.i.d. standard normals.
    pub fn gaussian(&mut self, shape: Shape) -> ImageTensor {
        let data = (0..shape.len()).map(|_| self.normal()).collect();
        ImageTensor::from_raw(shape, data)
    }
}
