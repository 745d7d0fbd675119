//! Noise predictors `eps(x_t, t)`.
//!
//! The sampler only sees the [`NoisePredictor`] trait. Two analytic priors
//! ship with exact posterior-mean noise (they stand in for a trained network
//! and double as test oracles), plus a small convolutional denoiser loaded
//! from a `DNW1` weight file.

mod analytic;
mod denoiser;

pub use analytic::{GaussianPrior, MixturePrior};
pub use denoiser::{ConvDenoiser, ConvLayer, DNW_MAGIC};

use crate::error::Result;
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;

/// Predicts the noise component of `x_t` at step `t`.
///
/// Implementations must be pure and callable from several threads at once;
/// the patch sampler evaluates patches in parallel against one predictor.
pub trait NoisePredictor: Send + Sync {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor>;
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for &P {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        (**self).predict(x_t, t, sched)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for Box<P> {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        (**self).predict(x_t, t, sched)
    }
}

impl<P: NoisePredictor + ?Sized> NoisePredictor for std::sync::Arc<P> {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        (**self).predict(x_t, t, sched)
    }
}
