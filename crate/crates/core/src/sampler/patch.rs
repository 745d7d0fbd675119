//! Patch-based sampling for images of any size.

use rayon::prelude::*;

use crate::error::{invalid, Result};
use crate::predictor::NoisePredictor;
use crate::rng::RandomSource;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, PatchRect, Shape};

use super::{enhance, EnhanceConfig, EnhanceResult};

/// Side lengths are padded up to a multiple of this before sampling.
const SIZE_MULTIPLE: usize = 16;

/// Overlapping `p x p` windows at stride `r`, with the last row and column
/// snapped to the image border.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub stride: usize,
    pub rects: Vec<PatchRect>,
    /// Number of windows covering each pixel, row-major.
    pub counts: Vec<u32>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.rects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rects.is_empty()
    }
}

fn offsets(extent: usize, p: usize, r: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos + p <= extent {
        out.push(pos);
        pos += r;
    }
    if let Some(&last) = out.last() {
        if last + p < extent {
            out.push(extent - p);
        }
    }
    out
}

pub fn build_patch_grid(height: usize, width: usize, p: usize, r: usize) -> Result<PatchGrid> {
    if p == 0 || r == 0 {
        return Err(invalid("patch size and stride must be positive"));
    }
    if r > p {
        return Err(invalid(format!("stride {r} exceeds patch size {p}; pixels would be skipped")));
    }
    if p > height || p > width {
        return Err(invalid(format!("patch size {p} exceeds image {height}x{width}")));
    }
    let rows = offsets(height, p, r);
    let cols = offsets(width, p, r);
    let mut rects = Vec::with_capacity(rows.len() * cols.len());
    let mut counts = vec![0u32; height * width];
    for &top in &rows {
        for &left in &cols {
            rects.push(PatchRect::new(top, left, p));
            for i in top..top + p {
                for c in &mut counts[i * width + left..i * width + left + p] {
                    *c += 1;
                }
            }
        }
    }
    Ok(PatchGrid {
        height,
        width,
        patch: p,
        stride: r,
        rects,
        counts,
    })
}

/// Accumulates per-patch estimates in grid order and divides by the
/// coverage counts. Returns the averaged field and the raw per-pixel sums.
pub fn aggregate_patch_noise(grid: &PatchGrid, channels: usize, estimates: &[ImageTensor]) -> Result<(ImageTensor, Vec<f64>)> {
    if estimates.len() != grid.len() {
        return Err(invalid(format!("{} estimates for {} patches", estimates.len(), grid.len())));
    }
    let (h, w, p) = (grid.height, grid.width, grid.patch);
    let plane = h * w;
    let mut sums = vec![0.0; channels * plane];
    for (rect, est) in grid.rects.iter().zip(estimates) {
        est.expect_shape(Shape::new(channels, p, p))?;
        for c in 0..channels {
            for i in 0..p {
                let src = &est.data()[(c * p + i) * p..(c * p + i + 1) * p];
                let start = c * plane + (rect.top + i) * w + rect.left;
                for (s, &v) in sums[start..start + p].iter_mut().zip(src) {
                    *s += v;
                }
            }
        }
    }
    let mut avg = sums.clone();
    for c in 0..channels {
        for (v, &n) in avg[c * plane..(c + 1) * plane].iter_mut().zip(&grid.counts) {
            *v /= f64::from(n);
        }
    }
    Ok((ImageTensor::from_raw(Shape::new(channels, h, w), avg), sums))
}

/// Wraps a predictor so that full-size inputs are estimated patch by patch
/// and averaged per pixel.
pub struct PatchAveraged<'a> {
    inner: &'a dyn NoisePredictor,
    grid: PatchGrid,
    pool: Option<rayon::ThreadPool>,
}

impl<'a> PatchAveraged<'a> {
    pub fn new(inner: &'a dyn NoisePredictor, grid: PatchGrid, workers: usize) -> Result<Self> {
        let pool = if workers > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| invalid(format!("cannot start {workers} workers: {e}")))?;
            Some(pool)
        } else {
            None
        };
        Ok(Self { inner, grid, pool })
    }

    pub fn grid(&self) -> &PatchGrid {
        &self.grid
    }
}

impl NoisePredictor for PatchAveraged<'_> {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        x_t.expect_shape(Shape::new(x_t.channels(), self.grid.height, self.grid.width))?;
        let one = |rect: &PatchRect| -> Result<ImageTensor> { self.inner.predict(&x_t.crop(*rect)?, t, sched) };
        let estimates: Vec<ImageTensor> = match &self.pool {
            Some(pool) => pool.install(|| self.grid.rects.par_iter().map(one).collect::<Result<_>>())?,
            None => self.grid.rects.iter().map(one).collect::<Result<_>>()?,
        };
        Ok(aggregate_patch_noise(&self.grid, x_t.channels(), &estimates)?.0)
    }
}

fn round_up(v: usize) -> usize {
    v.div_ceil(SIZE_MULTIPLE) * SIZE_MULTIPLE
}

/// Enhances an image of arbitrary size.
///
/// The observation is edge-padded to a multiple of 16. If the padded image
/// is smaller than one patch it is sampled whole; otherwise every step uses
/// the patch-averaged noise estimate. The output is cropped back to the
/// input size.
pub fn enhance_any_size(
    y: &ImageTensor,
    pred: &dyn NoisePredictor,
    sched: &NoiseSchedule,
    cfg: &EnhanceConfig,
    rng: &mut RandomSource,
) -> Result<EnhanceResult> {
    let (h, w) = (y.height(), y.width());
    let (ph, pw) = (round_up(h), round_up(w));
    let padded = y.pad_edge(ph, pw)?;
    let p = cfg.patch_size;
    let mut result = if ph < p || pw < p {
        log::info!("image {h}x{w} smaller than one patch; sampling whole image at {ph}x{pw}");
        enhance(&padded, pred, sched, cfg, rng)?
    } else {
        let grid = build_patch_grid(ph, pw, p, cfg.patch_stride)?;
        let patches = grid.len();
        log::info!("sampling {h}x{w} (padded {ph}x{pw}) with {patches} patches of {p}");
        let averaged = PatchAveraged::new(pred, grid, cfg.workers)?;
        let mut r = enhance(&padded, &averaged, sched, cfg, rng)?;
        r.patches = patches;
        r
    };
    if (ph, pw) != (h, w) {
        result.enhanced = result.enhanced.sub_image(0, 0, h, w)?;
        result.fitted.mask = result.fitted.mask.sub_image(0, 0, h, w)?;
    }
    Ok(result)
}
