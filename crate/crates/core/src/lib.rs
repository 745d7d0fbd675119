//! Training-free, guidance-driven diffusion sampling for image enhancement.
//!
//! A pretrained noise predictor is used as an image prior; the reverse
//! process is steered towards a degraded observation `y = f x + M` whose gain
//! `f` and mask `M` are estimated while sampling. Large images are handled by
//! averaging per-patch noise estimates at every step. The [`metrics`] module
//! provides the no-reference and overlap scores used to evaluate results.

pub mod error;
pub mod gradcheck;
pub mod guidance;
pub mod io;
pub mod metrics;
pub mod predictor;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;

pub use error::{Error, FormatError, Result};
pub use guidance::{DegradationInit, DegradationParams, GuidanceConfig};
pub use predictor::{ConvDenoiser, ConvLayer, GaussianPrior, MixturePrior, NoisePredictor};
pub use rng::RandomSource;
pub use sampler::{EnhanceConfig, EnhanceResult, PatchGrid, TraceRow};
pub use schedule::{NoiseSchedule, ScheduleSpec};
pub use tensor::{ImageTensor, PatchRect, Shape};
