//! Degradation model, guidance losses and their analytic gradients.
//!
//! The observation model is `y = f x + M` with a scalar gain `f` and a
//! per-element mask `M`. At every reverse step the sampler evaluates
//!
//! ```text
//! L(x_t) = s * MSE(f x0_hat + M, y) + l_exp * Exposure(x0_hat) + l_smooth * Smooth(M)
//! ```
//!
//! with `x0_hat` the clean estimate from the predicted noise, and shifts the
//! reverse mean by `-beta_tilde * grad L`. The noise prediction is treated
//! as a constant, so `d x0_hat / d x_t = 1 / sqrt(abar_t)`.

use crate::error::{invalid, Result};
use crate::predictor::NoisePredictor;
use crate::rng::RandomSource;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

/// Gain and mask of the degradation `y = f x + M`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationParams {
    pub gain: f64,
    pub mask: ImageTensor,
}

/// How `(f, M)` start before co-optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegradationInit {
    /// `f = 1`, `M = 0`.
    #[default]
    Identity,
    /// `f ~ U[0.5, 1.5]`, `M ~ N(0, 0.01)` elementwise, drawn from the run's seed.
    Random,
}

impl DegradationParams {
    pub fn new(gain: f64, mask: ImageTensor) -> Result<Self> {
        if !gain.is_finite() {
            return Err(invalid("degradation gain must be finite"));
        }
        Ok(Self { gain, mask })
    }

    pub fn identity(shape: Shape) -> Result<Self> {
        Ok(Self {
            gain: 1.0,
            mask: ImageTensor::zeros(shape)?,
        })
    }

    pub fn random(shape: Shape, rng: &mut RandomSource) -> Self {
        let gain = rng.uniform(0.5, 1.5);
        let mask = rng.gaussian(shape).map(|v| 0.1 * v);
        Self { gain, mask }
    }

    pub fn init(kind: DegradationInit, shape: Shape, rng: &mut RandomSource) -> Result<Self> {
        match kind {
            DegradationInit::Identity => Self::identity(shape),
            DegradationInit::Random => Ok(Self::random(shape, rng)),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.gain.is_finite() && self.mask.is_finite()
    }
}

/// Guidance strength, quality-loss weights and degradation optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Guidance scale `s` on the data-consistency MSE.
    pub scale: f64,
    pub lambda_exposure: f64,
    pub lambda_smooth: f64,
    /// Well-exposedness target `E`.
    pub exposure_target: f64,
    /// Side of the square exposure blocks.
    pub region: usize,
    pub lr_gain: f64,
    pub lr_mask: f64,
    pub gain_min: f64,
    pub gain_max: f64,
    /// Clamp `x0_hat` to `[-1, 1]` before guidance and the posterior mean.
    pub clamp_x0: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            scale: 100_000.0,
            lambda_exposure: 0.001,
            lambda_smooth: 0.001,
            exposure_target: 0.4,
            region: 16,
            lr_gain: 0.1,
            lr_mask: 0.1,
            gain_min: 1e-3,
            gain_max: 10.0,
            clamp_x0: false,
        }
    }
}

impl GuidanceConfig {
    /// Defaults with `s = 1`, sized for small images and analytic priors.
    pub fn desk() -> Self {
        Self {
            scale: 1.0,
            ..Self::default()
        }
    }

    /// No guidance at all: sampling reduces to the unconditional sampler.
    pub fn unguided() -> Self {
        Self {
            scale: 0.0,
            lambda_exposure: 0.0,
            lambda_smooth: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.scale) {
            return Err(invalid(format!("guidance scale must be >= 0, got {}", self.scale)));
        }
        if !nonneg(self.lambda_exposure) || !nonneg(self.lambda_smooth) {
            return Err(invalid("loss weights must be >= 0"));
        }
        if !(self.exposure_target > 0.0 && self.exposure_target < 1.0) {
            return Err(invalid(format!(
                "exposure target must lie in (0, 1), got {}",
                self.exposure_target
            )));
        }
        if self.region == 0 {
            return Err(invalid("exposure region must be at least 1"));
        }
        if !nonneg(self.lr_gain) || !nonneg(self.lr_mask) {
            return Err(invalid("learning rates must be >= 0"));
        }
        if !(self.gain_min.is_finite() && self.gain_max.is_finite() && self.gain_min <= self.gain_max) {
            return Err(invalid("gain bounds must be finite with min <= max"));
        }
        Ok(())
    }
}

/// `f x + M`.
pub fn degrade(x: &ImageTensor, params: &DegradationParams) -> Result<ImageTensor> {
    let f = params.gain;
    x.zip_map(&params.mask, |v, m| f * v + m)
}

/// Mean squared error and its gradient with respect to `a`.
pub fn mse_loss_and_grad(a: &ImageTensor, b: &ImageTensor) -> Result<(f64, ImageTensor)> {
    let diff = a.zip_map(b, |x, y| x - y)?;
    let n = diff.len() as f64;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.map(|d| 2.0 * d / n)))
}

/// Block means within this distance of the target count as sitting on the
/// kink of `|R - E|`, so rounding in the block sum cannot flip the subgradient.
const EXPOSURE_KINK: f64 = 1e-12;

/// Mean absolute deviation of block intensities from the exposure target.
///
/// Blocks are `region x region` tiles of the channel-mean image; tiles at
/// the right and bottom edges may be smaller and use their true pixel
/// count. The gradient is the subgradient `sign(R_k - E)`, zero at the kink.
pub fn exposure_loss_and_grad(x: &ImageTensor, cfg: &GuidanceConfig) -> (f64, ImageTensor) {
    let s = x.shape();
    let lum = x.channel_mean();
    let r = cfg.region.max(1);
    let (bh, bw) = (s.height.div_ceil(r), s.width.div_ceil(r));
    let blocks = (bh * bw) as f64;
    let mut loss = 0.0;
    let mut plane_grad = vec![0.0; s.pixels()];
    for bi in 0..bh {
        for bj in 0..bw {
            let rows = bi * r..((bi + 1) * r).min(s.height);
            let cols = bj * r..((bj + 1) * r).min(s.width);
            let count = (rows.len() * cols.len()) as f64;
            let mut sum = 0.0;
            for i in rows.clone() {
                for j in cols.clone() {
                    sum += lum[i * s.width + j];
                }
            }
            let dev = sum / count - cfg.exposure_target;
            loss += dev.abs();
            let dir = if dev.abs() <= EXPOSURE_KINK { 0.0 } else { sign(dev) };
            let g = dir / (blocks * count * s.channels as f64);
            for i in rows {
                for j in cols.clone() {
                    plane_grad[i * s.width + j] = g;
                }
            }
        }
    }
    let grad = (0..s.channels).flat_map(|_| plane_grad.iter().copied()).collect();
    (loss / blocks, ImageTensor::from_raw(s, grad))
}

/// Squared total variation per channel: `sum_c (sum |dx| + sum |dy|)^2`
/// with forward differences.
pub fn smoothness_loss_and_grad(mask: &ImageTensor) -> (f64, ImageTensor) {
    let s = mask.shape();
    let (h, w) = (s.height, s.width);
    let mut loss = 0.0;
    let mut grad = vec![0.0; mask.len()];
    for c in 0..s.channels {
        let base = c * h * w;
        let px = &mask.data()[base..base + h * w];
        let mut total = 0.0;
        for i in 0..h {
            for j in 0..w {
                if j + 1 < w {
                    total += (px[i * w + j + 1] - px[i * w + j]).abs();
                }
                if i + 1 < h {
                    total += (px[(i + 1) * w + j] - px[i * w + j]).abs();
                }
            }
        }
        loss += total * total;
        let g = &mut grad[base..base + h * w];
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                if j + 1 < w {
                    let d = sign(px[k + 1] - px[k]);
                    g[k + 1] += 2.0 * total * d;
                    g[k] -= 2.0 * total * d;
                }
                if i + 1 < h {
                    let d = sign(px[k + w] - px[k]);
                    g[k + w] += 2.0 * total * d;
                    g[k] -= 2.0 * total * d;
                }
            }
        }
    }
    (loss, ImageTensor::from_raw(s, grad))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss values and the guidance direction at one reverse step.
#[derive(Debug, Clone)]
pub struct GuidanceTerms {
    /// `grad_{x_t} log p(y | x_t)`, i.e. the negated loss gradient.
    pub gradient: ImageTensor,
    /// The clean estimate the losses were evaluated on (after clamping).
    pub x0_hat: ImageTensor,
    pub mse: f64,
    pub exposure: f64,
    pub smoothness: f64,
}

fn clamp_x0(x0: ImageTensor, cfg: &GuidanceConfig) -> ImageTensor {
    if cfg.clamp_x0 {
        x0.clamp(-1.0, 1.0)
    } else {
        x0
    }
}

/// Evaluates the guidance losses at `x0_hat` and pulls the gradient back to
/// `x_t` through `1 / sqrt(abar_t)`.
pub fn guidance_terms(
    x_t: &ImageTensor,
    eps_hat: &ImageTensor,
    t: usize,
    y: &ImageTensor,
    params: &DegradationParams,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
) -> Result<GuidanceTerms> {
    x_t.expect_shape(y.shape())?;
    params.mask.expect_shape(y.shape())?;
    let raw = sched.predict_x0(x_t, eps_hat, t)?;
    let x0 = clamp_x0(raw.clone(), cfg);
    let (mse, d_mse) = mse_loss_and_grad(&degrade(&x0, params)?, y)?;
    let (exposure, d_exp) = exposure_loss_and_grad(&x0, cfg);
    let smoothness = if cfg.lambda_smooth > 0.0 {
        smoothness_loss_and_grad(&params.mask).0
    } else {
        0.0
    };
    let pull = 1.0 / sched.alpha_bar(t).sqrt();
    let (s, f, le) = (cfg.scale, params.gain, cfg.lambda_exposure);
    let mut gradient = d_mse.zip_map(&d_exp, |a, b| -pull * (s * f * a + le * b))?;
    if cfg.clamp_x0 {
        for (g, &v) in gradient.data_mut().iter_mut().zip(raw.data()) {
            if !(-1.0..=1.0).contains(&v) {
                *g = 0.0;
            }
        }
    }
    Ok(GuidanceTerms {
        gradient,
        x0_hat: x0,
        mse,
        exposure,
        smoothness,
    })
}

/// `grad_{x_t} log p(y | x_t)` with the noise prediction held fixed.
pub fn guidance_gradient(
    x_t: &ImageTensor,
    eps_hat: &ImageTensor,
    t: usize,
    y: &ImageTensor,
    params: &DegradationParams,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
) -> Result<ImageTensor> {
    Ok(guidance_terms(x_t, eps_hat, t, y, params, cfg, sched)?.gradient)
}

/// Total guided loss as a function of `x_t` for a given noise estimate.
pub fn guidance_loss(
    x_t: &ImageTensor,
    eps_hat: &ImageTensor,
    t: usize,
    y: &ImageTensor,
    params: &DegradationParams,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let x0 = clamp_x0(sched.predict_x0(x_t, eps_hat, t)?, cfg);
    let (mse, _) = mse_loss_and_grad(&degrade(&x0, params)?, y)?;
    let (exposure, _) = exposure_loss_and_grad(&x0, cfg);
    let smooth = if cfg.lambda_smooth > 0.0 {
        smoothness_loss_and_grad(&params.mask).0
    } else {
        0.0
    };
    Ok(cfg.scale * mse + cfg.lambda_exposure * exposure + cfg.lambda_smooth * smooth)
}

/// Guidance gradient that also differentiates through the predictor, by
/// central differences of the full loss in every element of `x_t`.
///
/// Costs two predictor calls per element; meant for validating the
/// stop-gradient approximation on small images.
#[allow(clippy::too_many_arguments)]
pub fn guidance_gradient_through_predictor(
    pred: &dyn NoisePredictor,
    x_t: &ImageTensor,
    t: usize,
    y: &ImageTensor,
    params: &DegradationParams,
    cfg: &GuidanceConfig,
    sched: &NoiseSchedule,
    h: f64,
) -> Result<ImageTensor> {
    let shape = x_t.shape();
    let loss_at = |data: Vec<f64>| -> Result<f64> {
        let x = ImageTensor::from_raw(shape, data);
        let eps = pred.predict(&x, t, sched)?;
        guidance_loss(&x, &eps, t, y, params, cfg, sched)
    };
    let mut grad = Vec::with_capacity(shape.len());
    for k in 0..shape.len() {
        let mut plus = x_t.data().to_vec();
        plus[k] += h;
        let mut minus = x_t.data().to_vec();
        minus[k] -= h;
        grad.push(-(loss_at(plus)? - loss_at(minus)?) / (2.0 * h));
    }
    Ok(ImageTensor::from_raw(shape, grad))
}

/// Objective minimized over `(f, M)`: `MSE(f x0 + M, y) + l_smooth * Smooth(M)`.
pub fn degradation_loss(
    params: &DegradationParams,
    x0_hat: &ImageTensor,
    y: &ImageTensor,
    cfg: &GuidanceConfig,
) -> Result<f64> {
    let (mse, _) = mse_loss_and_grad(&degrade(x0_hat, params)?, y)?;
    let smooth = if cfg.lambda_smooth > 0.0 {
        smoothness_loss_and_grad(&params.mask).0
    } else {
        0.0
    };
    Ok(mse + cfg.lambda_smooth * smooth)
}

/// Analytic gradient of [`degradation_loss`] as `(d/df, d/dM)`.
pub fn degradation_gradient(
    params: &DegradationParams,
    x0_hat: &ImageTensor,
    y: &ImageTensor,
    cfg: &GuidanceConfig,
) -> Result<(f64, ImageTensor)> {
    let (_, d_pred) = mse_loss_and_grad(&degrade(x0_hat, params)?, y)?;
    let d_gain: f64 = d_pred.data().iter().zip(x0_hat.data()).map(|(g, x)| g * x).sum();
    let d_mask = if cfg.lambda_smooth > 0.0 {
        let (_, d_smooth) = smoothness_loss_and_grad(&params.mask);
        d_pred.zip_map(&d_smooth, |a, b| a + cfg.lambda_smooth * b)?
    } else {
        d_pred
    };
    Ok((d_gain, d_mask))
}

/// One gradient-descent step on `(f, M)` with `f` clamped to the configured bounds.
pub fn update_degradation(
    params: &DegradationParams,
    x0_hat: &ImageTensor,
    y: &ImageTensor,
    cfg: &GuidanceConfig,
) -> Result<DegradationParams> {
    let (d_gain, d_mask) = degradation_gradient(params, x0_hat, y, cfg)?;
    let gain = (params.gain - cfg.lr_gain * d_gain).clamp(cfg.gain_min, cfg.gain_max);
    let mask = params.mask.zip_map(&d_mask, |m, g| m - cfg.lr_mask * g)?;
    Ok(DegradationParams { gain, mask })
}
