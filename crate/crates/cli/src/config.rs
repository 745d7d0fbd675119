//! Flat `key=value` engine configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default, so an empty file is a valid configuration. Unknown and repeated
//! keys are errors.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use enhance_core::{
    ConvDenoiser, DegradationInit, GaussianPrior, GuidanceConfig, ImageTensor, MixturePrior, NoisePredictor,
    ScheduleSpec, Shape,
};
use enhance_core::metrics::{SnrScale, LOE_SAMPLE_CAP};
use enhance_core::sampler::EnhanceConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorKind {
    Gaussian,
    Mixture,
    Denoiser,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    /// Prior mean level for the Gaussian backend.
    pub mean: f64,
    /// Shared prior standard deviation of the analytic backends.
    pub sigma: f64,
    pub mixture_weights: Vec<f64>,
    pub mixture_means: Vec<f64>,
    /// `DNW1` file for the denoiser backend.
    pub weights: Option<PathBuf>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            kind: PredictorKind::Gaussian,
            mean: 0.5,
            sigma: 0.25,
            mixture_weights: vec![0.5, 0.5],
            mixture_means: vec![0.25, 0.75],
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub seed: u64,
    pub trace: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub schedule: ScheduleSpec,
    pub predictor: PredictorConfig,
    pub guidance: GuidanceConfig,
    pub update_degradation: bool,
    pub init: DegradationInit,
    pub patch_size: usize,
    pub patch_stride: usize,
    pub run: RunConfig,
    pub loe_cap: usize,
    pub snr_scale: SnrScale,
}

impl Default for EngineConfig {
    fn default() -> Self {
        let sampler = EnhanceConfig::default();
        Self {
            schedule: ScheduleSpec::default(),
            predictor: PredictorConfig::default(),
            guidance: sampler.guidance,
            update_degradation: sampler.update_degradation,
            init: sampler.init,
            patch_size: sampler.patch_size,
            patch_stride: sampler.patch_stride,
            run: RunConfig {
                workers: 1,
                ..RunConfig::default()
            },
            loe_cap: LOE_SAMPLE_CAP,
            snr_scale: SnrScale::Decibel,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, String> {
    value.split(',').map(|v| parse_num(key, v.trim())).collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl EngineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Input(format!("config line {}: expected key=value", n + 1)))?;
            let key = key.trim();
            if seen.iter().any(|k| k == key) {
                return Err(CliError::Input(format!("config line {}: duplicate key {key}", n + 1)));
            }
            cfg.set(key, value.trim())
                .map_err(|e| CliError::Input(format!("config line {}: {e}", n + 1)))?;
            seen.push(key.to_string());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let g = &mut self.guidance;
        match key {
            "schedule.family" => {
                if value != "linear" {
                    return Err(format!("schedule.family: only \"linear\" is supported, got {value:?}"));
                }
            }
            "schedule.T" => self.schedule.steps = parse_num(key, value)?,
            "schedule.beta_start" => self.schedule.beta_start = parse_num(key, value)?,
            "schedule.beta_end" => self.schedule.beta_end = parse_num(key, value)?,
            "schedule.respacing" => {
                self.schedule.respacing = match value {
                    "none" | "" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            "predictor.kind" => {
                self.predictor.kind = match value {
                    "gaussian" => PredictorKind::Gaussian,
                    "mixture" => PredictorKind::Mixture,
                    "denoiser" => PredictorKind::Denoiser,
                    _ => return Err(format!("predictor.kind: unknown backend {value:?}")),
                }
            }
            "predictor.mean" => self.predictor.mean = parse_num(key, value)?,
            "predictor.sigma" => self.predictor.sigma = parse_num(key, value)?,
            "predictor.mixture_weights" => self.predictor.mixture_weights = parse_list(key, value)?,
            "predictor.mixture_means" => self.predictor.mixture_means = parse_list(key, value)?,
            "predictor.weights" => self.predictor.weights = parse_path(value),
            "guidance.s" => g.scale = parse_num(key, value)?,
            "guidance.E" => g.exposure_target = parse_num(key, value)?,
            "guidance.lambda_exp" => g.lambda_exposure = parse_num(key, value)?,
            "guidance.lambda_smooth" => g.lambda_smooth = parse_num(key, value)?,
            "guidance.region" => g.region = parse_num(key, value)?,
            "guidance.lr_f" => g.lr_gain = parse_num(key, value)?,
            "guidance.lr_M" => g.lr_mask = parse_num(key, value)?,
            "guidance.f_min" => g.gain_min = parse_num(key, value)?,
            "guidance.f_max" => g.gain_max = parse_num(key, value)?,
            "guidance.clamp_x0" => g.clamp_x0 = parse_bool(key, value)?,
            "guidance.update" => self.update_degradation = parse_bool(key, value)?,
            "guidance.init" => {
                self.init = match value {
                    "identity" => DegradationInit::Identity,
                    "random" => DegradationInit::Random,
                    _ => return Err(format!("guidance.init: expected identity or random, got {value:?}")),
                }
            }
            "patch.p" => self.patch_size = parse_num(key, value)?,
            "patch.r" => self.patch_stride = parse_num(key, value)?,
            "run.seed" => self.run.seed = parse_num(key, value)?,
            "run.trace" => self.run.trace = parse_path(value),
            "run.output" => self.run.output = parse_path(value),
            "run.workers" => self.run.workers = parse_num(key, value)?,
            "metrics.loe_cap" => self.loe_cap = parse_num(key, value)?,
            "metrics.snr_scale" => {
                self.snr_scale = match value {
                    "db" => SnrScale::Decibel,
                    "linear" => SnrScale::Linear,
                    _ => return Err(format!("metrics.snr_scale: expected db or linear, got {value:?}")),
                }
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Every key with its effective value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let g = &self.guidance;
        let p = &self.predictor;
        vec![
            ("schedule.family", "linear".into()),
            ("schedule.T", self.schedule.steps.to_string()),
            ("schedule.beta_start", self.schedule.beta_start.to_string()),
            ("schedule.beta_end", self.schedule.beta_end.to_string()),
            (
                "schedule.respacing",
                self.schedule.respacing.map_or("none".into(), |n| n.to_string()),
            ),
            (
                "predictor.kind",
                match p.kind {
                    PredictorKind::Gaussian => "gaussian",
                    PredictorKind::Mixture => "mixture",
                    PredictorKind::Denoiser => "denoiser",
                }
                .into(),
            ),
            ("predictor.mean", p.mean.to_string()),
            ("predictor.sigma", p.sigma.to_string()),
            ("predictor.mixture_weights", show_list(&p.mixture_weights)),
            ("predictor.mixture_means", show_list(&p.mixture_means)),
            ("predictor.weights", show_path(&p.weights)),
            ("guidance.s", g.scale.to_string()),
            ("guidance.E", g.exposure_target.to_string()),
            ("guidance.lambda_exp", g.lambda_exposure.to_string()),
            ("guidance.lambda_smooth", g.lambda_smooth.to_string()),
            ("guidance.region", g.region.to_string()),
            ("guidance.lr_f", g.lr_gain.to_string()),
            ("guidance.lr_M", g.lr_mask.to_string()),
            ("guidance.f_min", g.gain_min.to_string()),
            ("guidance.f_max", g.gain_max.to_string()),
            ("guidance.clamp_x0", g.clamp_x0.to_string()),
            ("guidance.update", self.update_degradation.to_string()),
            (
                "guidance.init",
                match self.init {
                    DegradationInit::Identity => "identity",
                    DegradationInit::Random => "random",
                }
                .into(),
            ),
            ("patch.p", self.patch_size.to_string()),
            ("patch.r", self.patch_stride.to_string()),
            ("run.seed", self.run.seed.to_string()),
            ("run.trace", show_path(&self.run.trace)),
            ("run.output", show_path(&self.run.output)),
            ("run.workers", self.run.workers.to_string()),
            ("metrics.loe_cap", self.loe_cap.to_string()),
            (
                "metrics.snr_scale",
                match self.snr_scale {
                    SnrScale::Decibel => "db",
                    SnrScale::Linear => "linear",
                }
                .into(),
            ),
        ]
    }

    pub fn serialize(&self) -> String {
        self.entries().into_iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Input(m));
        self.guidance.validate().map_err(|e| CliError::Input(e.to_string()))?;
        self.schedule.build().map_err(|e| CliError::Input(e.to_string()))?;
        if self.patch_size == 0 || self.patch_stride == 0 || self.patch_stride > self.patch_size {
            return bad(format!(
                "patch stride must lie in 1..={}, got {}",
                self.patch_size, self.patch_stride
            ));
        }
        if self.run.workers == 0 {
            return bad("run.workers must be at least 1".into());
        }
        if self.loe_cap < 2 {
            return bad("metrics.loe_cap must be at least 2".into());
        }
        let p = &self.predictor;
        if !(p.sigma.is_finite() && p.sigma >= 0.0) {
            return bad(format!("predictor.sigma must be >= 0, got {}", p.sigma));
        }
        if p.kind == PredictorKind::Mixture && p.mixture_weights.len() != p.mixture_means.len() {
            return bad("predictor.mixture_weights and predictor.mixture_means differ in length".into());
        }
        if p.kind == PredictorKind::Denoiser && p.weights.is_none() {
            return bad("predictor.kind=denoiser needs predictor.weights".into());
        }
        Ok(())
    }

    pub fn sampler_config(&self) -> EnhanceConfig {
        EnhanceConfig {
            guidance: self.guidance,
            update_degradation: self.update_degradation,
            init: self.init,
            full_gradient_step: None,
            trace: self.run.trace.is_some(),
            patch_size: self.patch_size,
            patch_stride: self.patch_stride,
            workers: self.run.workers,
        }
    }

    /// Instantiates the configured backend for images with `channels` channels.
    pub fn build_predictor(&self, channels: usize) -> Result<Box<dyn NoisePredictor>, CliError> {
        let p = &self.predictor;
        let input = |e: enhance_core::Error| CliError::Input(e.to_string());
        Ok(match p.kind {
            PredictorKind::Gaussian => Box::new(GaussianPrior::constant(channels, p.mean, p.sigma).map_err(input)?),
            PredictorKind::Mixture => {
                let means = p
                    .mixture_means
                    .iter()
                    .map(|&m| ImageTensor::filled(Shape::new(channels, 1, 1), m))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(input)?;
                Box::new(MixturePrior::new(p.mixture_weights.clone(), means, p.sigma).map_err(input)?)
            }
            PredictorKind::Denoiser => {
                let path = p.weights.as_ref().expect("validated");
                let net = ConvDenoiser::load(path)
                    .map_err(|e| CliError::Input(format!("cannot load weights {}: {e}", path.display())))?;
                if net.image_channels() != channels {
                    return Err(CliError::Input(format!(
                        "denoiser expects {} channels, image has {channels}",
                        net.image_channels()
                    )));
                }
                Box::new(net)
            }
        })
    }
}
