//! Shared fixtures for the benchmarks.

use enhance_core::{ImageTensor, NoiseSchedule, Shape};

/// Dim, blocky observation in `[0.1, 0.3]`.
pub fn low_light(channels: usize, height: usize, width: usize) -> ImageTensor {
    ImageTensor::from_fn(Shape::new(channels, height, width), |c, i, j| {
        0.1 + 0.1 * ((i / 16 + j / 16 + c) % 3) as f64
    })
    .expect("finite values")
}

/// The default linear schedule respaced to `steps`.
pub fn schedule(steps: usize) -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02)
        .and_then(|s| s.respaced(steps))
        .expect("valid schedule")
}
