use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use enhance_core::guidance::{degrade, exposure_loss_and_grad, mse_loss_and_grad};
use enhance_core::io::{read_image, write_image};
use enhance_core::metrics::{entropy, loe, loe_exact, overlap_metrics, snr_dilated, BinaryMask, SnrScale, LOE_SAMPLE_CAP};
use enhance_core::sampler::{enhance_any_size, write_trace_csv};
use enhance_core::{ImageTensor, RandomSource};

use crate::config::EngineConfig;
use crate::CliError;

#[derive(Debug, Clone, Default)]
pub struct EnhanceOptions {
    /// Defaults are used when absent.
    pub config: Option<PathBuf>,
    pub input: PathBuf,
    /// Falls back to `run.output`.
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhanceSummary {
    pub output: PathBuf,
    pub trace: Option<PathBuf>,
    pub gain: f64,
    pub mse: f64,
    pub exposure: f64,
    pub patches: usize,
}

impl fmt::Display for EnhanceSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "output: {}", self.output.display())?;
        if let Some(t) = &self.trace {
            writeln!(f, "trace: {}", t.display())?;
        }
        writeln!(f, "fitted f: {}", self.gain)?;
        writeln!(f, "mse: {}", self.mse)?;
        writeln!(f, "exposure: {}", self.exposure)?;
        write!(f, "patches: {}", self.patches)
    }
}

fn read_input(path: &Path, what: &str) -> Result<ImageTensor, CliError> {
    read_image(path).map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))
}

pub fn cmd_enhance(opts: &EnhanceOptions) -> Result<EnhanceSummary, CliError> {
    let mut cfg = match &opts.config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.run.seed = seed;
    }
    if let Some(w) = opts.workers {
        cfg.run.workers = w;
    }
    if opts.trace.is_some() {
        cfg.run.trace.clone_from(&opts.trace);
    }
    cfg.validate()?;
    let output = opts
        .output
        .clone()
        .or_else(|| cfg.run.output.clone())
        .ok_or_else(|| CliError::Input("no output path given (flag or run.output)".into()))?;

    let y = read_input(&opts.input, "input")?;
    let sched = cfg.schedule.build()?;
    let pred = cfg.build_predictor(y.channels())?;
    let sampler = cfg.sampler_config();
    log::info!(
        "enhancing {} ({}x{}x{}), {} steps, seed {}",
        opts.input.display(),
        y.channels(),
        y.height(),
        y.width(),
        sched.steps(),
        cfg.run.seed
    );
    let mut rng = RandomSource::new(cfg.run.seed);
    let result = enhance_any_size(&y, pred.as_ref(), &sched, &sampler, &mut rng)?;

    write_image(&output, &result.enhanced)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", output.display())))?;
    if let (Some(path), Some(rows)) = (&cfg.run.trace, &result.trace) {
        let file = File::create(path).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
        write_trace_csv(rows, BufWriter::new(file))
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))?;
    }
    let (mse, _) = mse_loss_and_grad(&degrade(&result.enhanced, &result.fitted)?, &y)?;
    let (exposure, _) = exposure_loss_and_grad(&result.enhanced, &cfg.guidance);
    Ok(EnhanceSummary {
        output,
        trace: cfg.run.trace,
        gain: result.fitted.gain,
        mse,
        exposure,
        patches: result.patches,
    })
}

#[derive(Debug, Clone)]
pub struct MetricsOptions {
    pub original: PathBuf,
    pub enhanced: PathBuf,
    /// First CSV column; defaults to the enhanced file stem.
    pub id: Option<String>,
    /// Traced signal mask for the dilated SNR columns.
    pub signal: Option<PathBuf>,
    pub radii: Vec<usize>,
    /// Predicted and reference segmentation masks for the overlap columns.
    pub pred_mask: Option<PathBuf>,
    pub gt_mask: Option<PathBuf>,
    pub exact_loe: bool,
    pub loe_cap: usize,
    pub snr_scale: SnrScale,
}

impl MetricsOptions {
    pub fn new(original: impl Into<PathBuf>, enhanced: impl Into<PathBuf>) -> Self {
        Self {
            original: original.into(),
            enhanced: enhanced.into(),
            id: None,
            signal: None,
            radii: vec![1, 3, 5, 7, 9],
            pred_mask: None,
            gt_mask: None,
            exact_loe: false,
            loe_cap: LOE_SAMPLE_CAP,
            snr_scale: SnrScale::Decibel,
        }
    }
}

fn read_mask(path: &Path) -> Result<BinaryMask, CliError> {
    Ok(BinaryMask::from_image(&read_input(path, "mask")?, 0.5))
}

/// Scores one image pair; returns the CSV header and row.
pub fn cmd_metrics(opts: &MetricsOptions) -> Result<String, CliError> {
    let original = read_input(&opts.original, "original")?;
    let enhanced = read_input(&opts.enhanced, "enhanced image")?;
    let id = opts.id.clone().unwrap_or_else(|| {
        opts.enhanced
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let loe_value = if opts.exact_loe {
        loe_exact(&original, &enhanced)?
    } else {
        loe(&original, &enhanced, opts.loe_cap)?
    };
    let mut header = vec!["image_id".to_string(), "loe".into(), "entropy".into()];
    let mut row = vec![id, loe_value.to_string(), entropy(&enhanced).to_string()];
    if let Some(path) = &opts.signal {
        let signal = read_mask(path)?;
        for &r in &opts.radii {
            header.push(format!("snr_r{r}"));
            row.push(snr_dilated(&enhanced, &signal, r, opts.snr_scale)?.to_string());
        }
    }
    match (&opts.pred_mask, &opts.gt_mask) {
        (Some(p), Some(g)) => {
            let o = overlap_metrics(&read_mask(p)?, &read_mask(g)?)?;
            header.extend(["pa".into(), "iou".into(), "dice".into()]);
            row.extend([o.pa.to_string(), o.iou.to_string(), o.dice.to_string()]);
        }
        (None, None) => {}
        _ => return Err(CliError::Input("overlap metrics need both a predicted and a reference mask".into())),
    }
    Ok(format!("{}\n{}\n", header.join(","), row.join(",")))
}
