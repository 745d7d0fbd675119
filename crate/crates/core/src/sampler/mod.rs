//! Reverse-time samplers.
//!
//! [`sample_unconditional`] is plain ancestral sampling with the posterior
//! variance `beta_tilde_t`. [`enhance`] adds the guidance mean shift
//! `beta_tilde_t * grad log p(y | x_t)` and refits the degradation `(f, M)`
//! once per step. [`enhance_any_size`] runs the same loop on a full-size
//! state whose noise estimate is the per-pixel average over overlapping
//! patches.

mod patch;

pub use patch::{aggregate_patch_noise, build_patch_grid, enhance_any_size, PatchAveraged, PatchGrid};

use std::io::Write;

use crate::error::{Error, Result};
use crate::guidance::{
    guidance_gradient_through_predictor, guidance_terms, update_degradation, DegradationInit, DegradationParams,
    GuidanceConfig,
};
use crate::predictor::NoisePredictor;
use crate::rng::RandomSource;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, Shape};

/// Salt for the stream that draws a random degradation initialisation, so
/// the main noise stream is the same whichever initialisation is used.
const INIT_STREAM: u64 = 0x005e_ed0f_de6a;

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceConfig {
    pub guidance: GuidanceConfig,
    /// Refit `(f, M)` after every step.
    pub update_degradation: bool,
    pub init: DegradationInit,
    /// Differentiate through the predictor with this central-difference step
    /// instead of holding the noise estimate fixed. Very slow; for validation.
    pub full_gradient_step: Option<f64>,
    pub trace: bool,
    /// Patch side for [`enhance_any_size`].
    pub patch_size: usize,
    /// Grid stride for [`enhance_any_size`].
    pub patch_stride: usize,
    /// Threads evaluating patches; 1 runs them inline.
    pub workers: usize,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            update_degradation: true,
            init: DegradationInit::Identity,
            full_gradient_step: None,
            trace: false,
            patch_size: 256,
            patch_stride: 128,
            workers: 1,
        }
    }
}

/// One row of the optional per-step trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    /// 0 for the first reverse step.
    pub step: usize,
    pub t: usize,
    pub mse: f64,
    pub exposure: f64,
    pub smoothness: f64,
    /// Gain used at this step.
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct EnhanceResult {
    pub enhanced: ImageTensor,
    pub fitted: DegradationParams,
    pub trace: Option<Vec<TraceRow>>,
    /// Patches per step; 1 on the whole-image path.
    pub patches: usize,
}

/// Writes the trace as `step,t,mse,exposure,smoothness,f`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "step,t,mse,exposure,smoothness,f")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{},{}", r.step, r.t, r.mse, r.exposure, r.smoothness, r.gain)?;
    }
    Ok(())
}

/// `mean + var * shift + sqrt(var) z`, with no noise on the final step.
fn reverse_step(
    mean: ImageTensor,
    var: f64,
    shift: Option<&ImageTensor>,
    t: usize,
    rng: &mut RandomSource,
) -> ImageTensor {
    let mut x = mean;
    if let Some(g) = shift {
        for (v, &s) in x.data_mut().iter_mut().zip(g.data()) {
            *v += var * s;
        }
    }
    if t > 1 {
        let sd = var.sqrt();
        let z = rng.gaussian(x.shape());
        for (v, &n) in x.data_mut().iter_mut().zip(z.data()) {
            *v += sd * n;
        }
    }
    x
}

/// Ancestral sampling from `x_T ~ N(0, I)` down to `x_0`.
pub fn sample_unconditional(
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    shape: Shape,
    rng: &mut RandomSource,
) -> Result<ImageTensor> {
    ImageTensor::zeros(shape)?;
    let mut x = rng.gaussian(shape);
    for t in (1..=sched.steps()).rev() {
        let eps = pred.predict(&x, t, sched)?;
        let x0 = sched.predict_x0(&x, &eps, t)?;
        let (mean, var) = sched.posterior_mean_var(&x, &x0, t)?;
        x = reverse_step(mean, var, None, t, rng);
        if !x.is_finite() {
            return Err(Error::NonFinite {
                step: sched.steps() - t,
                t,
                mse: f64::NAN,
                exposure: f64::NAN,
                gain: f64::NAN,
            });
        }
    }
    Ok(x)
}

/// Guided enhancement of `y`, starting from the configured initialisation.
pub fn enhance(
    y: &ImageTensor,
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    cfg: &EnhanceConfig,
    rng: &mut RandomSource,
) -> Result<EnhanceResult> {
    let mut init_rng = rng.split(INIT_STREAM);
    let params = DegradationParams::init(cfg.init, y.shape(), &mut init_rng)?;
    enhance_from(y, pred, sched, cfg, rng, params)
}

/// Guided enhancement starting from explicit degradation parameters.
pub fn enhance_from(
    y: &ImageTensor,
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    cfg: &EnhanceConfig,
    rng: &mut RandomSource,
    mut params: DegradationParams,
) -> Result<EnhanceResult> {
    cfg.guidance.validate()?;
    params.mask.expect_shape(y.shape())?;
    let gcfg = &cfg.guidance;
    let mut trace = cfg.trace.then(|| Vec::with_capacity(sched.steps()));
    let mut x = rng.gaussian(y.shape());
    for t in (1..=sched.steps()).rev() {
        let step = sched.steps() - t;
        let eps = pred.predict(&x, t, sched)?;
        let mut terms = guidance_terms(&x, &eps, t, y, &params, gcfg, sched)?;
        if let Some(h) = cfg.full_gradient_step {
            terms.gradient = guidance_gradient_through_predictor(pred, &x, t, y, &params, gcfg, sched, h)?;
        }
        if let Some(rows) = trace.as_mut() {
            rows.push(TraceRow {
                step,
                t,
                mse: terms.mse,
                exposure: terms.exposure,
                smoothness: terms.smoothness,
                gain: params.gain,
            });
        }
        let (mean, var) = sched.posterior_mean_var(&x, &terms.x0_hat, t)?;
        x = reverse_step(mean, var, Some(&terms.gradient), t, rng);
        if cfg.update_degradation {
            params = update_degradation(&params, &terms.x0_hat, y, gcfg)?;
        }
        if !x.is_finite() || !params.is_finite() || !terms.mse.is_finite() {
            return Err(Error::NonFinite {
                step,
                t,
                mse: terms.mse,
                exposure: terms.exposure,
                gain: params.gain,
            });
        }
    }
    Ok(EnhanceResult {
        enhanced: x,
        fitted: params,
        trace,
        patches: 1,
    })
}
