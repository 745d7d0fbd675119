//! Channel-major image tensors and the geometry helpers used by the samplers.

use crate::error::{invalid, Result};

/// Dimensions of an [`ImageTensor`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    /// Number of elements.
    pub fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// Square window inside an image, addressed by its top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PatchRect {
    pub top: usize,
    pub left: usize,
    pub size: usize,
}

impl PatchRect {
    pub fn new(top: usize, left: usize, size: usize) -> Self {
        Self { top, left, size }
    }

    pub fn fits_in(&self, shape: Shape) -> bool {
        self.size >= 1
            && self.top + self.size <= shape.height
            && self.left + self.size <= shape.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.top + self.size && col >= self.left && col < self.left + self.size
    }
}

/// A real-valued image stored channel-major (`c`, then row, then column).
///
/// The nominal intensity range is `[0, 1]`, but intermediate diffusion states
/// routinely leave it. Every constructor rejects non-finite data.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(channels, height, width);
        check_shape(shape)?;
        if data.len() != shape.len() {
            return Err(invalid(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite value at index {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        check_shape(shape)?;
        if !value.is_finite() {
            return Err(invalid("fill value must be finite"));
        }
        Ok(Self {
            shape,
            data: vec![value; shape.len()],
        })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::filled(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f(c, row, col)` at every element.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(shape.channels, shape.height, shape.width, data)
    }

    /// Skips validation; callers guarantee the length and check finiteness
    /// where the state can blow up.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.shape.height + row) * self.shape.width + col
    }

    #[inline]
    pub fn get(&self, c: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(c, row, col)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> Result<f64> {
        self.expect_shape(other.shape)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn expect_shape(&self, shape: Shape) -> Result<()> {
        if self.shape != shape {
            return Err(invalid(format!(
                "shape mismatch: {} vs {shape}",
                self.shape
            )));
        }
        Ok(())
    }

    /// Elementwise map. The closure must keep values finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        Self::from_raw(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub(crate) fn zip_map(&self, other: &ImageTensor, f: impl Fn(f64, f64) -> f64) -> Result<ImageTensor> {
        self.expect_shape(other.shape)?;
        Ok(Self::from_raw(
            self.shape,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    /// Per-pixel mean over channels, row-major.
    pub fn channel_mean(&self) -> Vec<f64> {
        let plane = self.shape.pixels();
        let mut out = vec![0.0; plane];
        for c in 0..self.shape.channels {
            for (o, v) in out.iter_mut().zip(&self.data[c * plane..(c + 1) * plane]) {
                *o += v;
            }
        }
        let n = self.shape.channels as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Per-pixel maximum over channels, row-major.
    pub fn channel_max(&self) -> Vec<f64> {
        let plane = self.shape.pixels();
        let mut out = self.data[..plane].to_vec();
        for c in 1..self.shape.channels {
            for (o, &v) in out.iter_mut().zip(&self.data[c * plane..(c + 1) * plane]) {
                *o = o.max(v);
            }
        }
        out
    }

    /// Bilinear resampling with half-pixel centres.
    ///
    /// Output pixel `j` samples source coordinate `(j + 0.5) * in / out - 0.5`,
    /// clamped to `[0, in - 1]`, and linearly blends the two neighbouring
    /// source pixels along each axis. Resizing `[0, 1]` from width 2 to 4
    /// therefore gives `[0, 0.25, 0.75, 1]`.
    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Result<ImageTensor> {
        if new_h == 0 || new_w == 0 {
            return Err(invalid("resize target dimensions must be at least 1"));
        }
        let Shape {
            channels,
            height,
            width,
        } = self.shape;
        if new_h == height && new_w == width {
            return Ok(self.clone());
        }
        let rows = axis_taps(height, new_h);
        let cols = axis_taps(width, new_w);
        let shape = Shape::new(channels, new_h, new_w);
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..channels {
            for &(r0, r1, wr) in &rows {
                for &(c0, c1, wc) in &cols {
                    let top = self.get(c, r0, c0) * (1.0 - wc) + self.get(c, r0, c1) * wc;
                    let bottom = self.get(c, r1, c0) * (1.0 - wc) + self.get(c, r1, c1) * wc;
                    data.push(top * (1.0 - wr) + bottom * wr);
                }
            }
        }
        Ok(Self::from_raw(shape, data))
    }

    /// Extracts an arbitrary rectangle.
    pub fn sub_image(&self, top: usize, left: usize, height: usize, width: usize) -> Result<ImageTensor> {
        if height == 0 || width == 0 || top + height > self.shape.height || left + width > self.shape.width {
            return Err(invalid(format!(
                "region ({top}, {left}, {height}x{width}) outside {}",
                self.shape
            )));
        }
        let shape = Shape::new(self.shape.channels, height, width);
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in top..top + height {
                let start = self.index(c, i, left);
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Ok(Self::from_raw(shape, data))
    }

    pub fn crop(&self, rect: PatchRect) -> Result<ImageTensor> {
        if !rect.fits_in(self.shape) {
            return Err(invalid(format!("patch {rect:?} outside {}", self.shape)));
        }
        self.sub_image(rect.top, rect.left, rect.size, rect.size)
    }

    /// Returns a copy of `self` with `patch` written at `rect`.
    pub fn paste(&self, patch: &ImageTensor, rect: PatchRect) -> Result<ImageTensor> {
        if !rect.fits_in(self.shape) {
            return Err(invalid(format!("patch {rect:?} outside {}", self.shape)));
        }
        patch.expect_shape(Shape::new(self.shape.channels, rect.size, rect.size))?;
        let mut out = self.clone();
        for c in 0..self.shape.channels {
            for i in 0..rect.size {
                let dst = out.index(c, rect.top + i, rect.left);
                let src = patch.index(c, i, 0);
                out.data[dst..dst + rect.size].copy_from_slice(&patch.data[src..src + rect.size]);
            }
        }
        Ok(out)
    }

    /// Grows the image to `new_h x new_w` by replicating the last row and column.
    pub fn pad_edge(&self, new_h: usize, new_w: usize) -> Result<ImageTensor> {
        if new_h < self.shape.height || new_w < self.shape.width {
            return Err(invalid("pad target smaller than image"));
        }
        let shape = Shape::new(self.shape.channels, new_h, new_w);
        let (h, w) = (self.shape.height, self.shape.width);
        Ok(Self::from_raw(
            shape,
            (0..shape.channels)
                .flat_map(|c| {
                    (0..new_h).flat_map(move |i| (0..new_w).map(move |j| (c, i.min(h - 1), j.min(w - 1))))
                })
                .map(|(c, i, j)| self.get(c, i, j))
                .collect(),
        ))
    }

    pub fn clamp(&self, lo: f64, hi: f64) -> ImageTensor {
        self.map(|v| v.clamp(lo, hi))
    }
}

fn check_shape(shape: Shape) -> Result<()> {
    if !(shape.channels == 1 || shape.channels == 3) {
        return Err(invalid(format!(
            "images have 1 or 3 channels, got {}",
            shape.channels
        )));
    }
    if shape.height == 0 || shape.width == 0 {
        return Err(invalid(format!("empty image shape {shape}")));
    }
    Ok(())
}

/// Source indices and blend weight for each output position along one axis.
fn axis_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|j| {
            let x = ((j as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(src - 1);
            (x0, x1, x - x0 as f64)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(h: usize, w: usize) -> ImageTensor {
        ImageTensor::from_fn(Shape::new(1, h, w), |_, i, j| (i * w + j) as f64).unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(ImageTensor::new(2, 2, 2, vec![0.0; 8]).is_err());
        assert!(ImageTensor::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(ImageTensor::new(1, 1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ImageTensor::new(1, 0, 2, vec![]).is_err());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageTensor::new(1, 2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(img.resize_bilinear(2, 2).unwrap(), img);

        let c = ImageTensor::filled(Shape::new(3, 5, 7), 0.5).unwrap();
        for (h, w) in [(1, 1), (3, 11), (10, 2)] {
            let r = c.resize_bilinear(h, w).unwrap();
            assert_eq!(r.shape(), Shape::new(3, h, w));
            assert!(r.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn resize_half_pixel_upsample() {
        let img = ImageTensor::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let r = img.resize_bilinear(1, 4).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn resize_zero_target_is_error() {
        let img = ramp(2, 2);
        assert!(img.resize_bilinear(0, 3).is_err());
        assert!(img.resize_bilinear(3, 0).is_err());
    }

    #[test]
    fn crop_cases() {
        let img = ramp(4, 4);
        assert_eq!(img.crop(PatchRect::new(0, 0, 4)).unwrap(), img);
        let tl = img.crop(PatchRect::new(0, 0, 2)).unwrap();
        assert_eq!(tl.data(), &[0.0, 1.0, 4.0, 5.0]);
        assert!(img.crop(PatchRect::new(3, 3, 2)).is_err());
    }

    #[test]
    fn pad_edge_replicates() {
        let img = ramp(2, 2);
        let p = img.pad_edge(3, 4).unwrap();
        assert_eq!(
            p.data(),
            &[0.0, 1.0, 1.0, 1.0, 2.0, 3.0, 3.0, 3.0, 2.0, 3.0, 3.0, 3.0]
        );
        assert_eq!(p.sub_image(0, 0, 2, 2).unwrap(), img);
    }

    #[test]
    fn channel_reductions() {
        let img = ImageTensor::new(3, 1, 2, vec![0.1, 0.9, 0.5, 0.2, 0.3, 0.4]).unwrap();
        let mean = img.channel_mean();
        assert!((mean[0] - 0.3).abs() < 1e-15);
        assert!((mean[1] - 0.5).abs() < 1e-15);
        assert_eq!(img.channel_max(), vec![0.5, 0.9]);
    }

    proptest! {
        #[test]
        fn paste_of_crop_is_identity(
            h in 1usize..12, w in 1usize..12, seed in 0u64..1000,
            top_frac in 0.0f64..1.0, left_frac in 0.0f64..1.0, size_frac in 0.0f64..1.0,
        ) {
            let img = ImageTensor::from_fn(Shape::new(3, h, w), |c, i, j| {
                ((seed as usize + c * 31 + i * 7 + j * 13) % 17) as f64 / 17.0
            }).unwrap();
            let size = 1 + ((h.min(w) - 1) as f64 * size_frac) as usize;
            let top = ((h - size) as f64 * top_frac) as usize;
            let left = ((w - size) as f64 * left_frac) as usize;
            let rect = PatchRect::new(top, left, size);
            let patch = img.crop(rect).unwrap();
            prop_assert_eq!(img.paste(&patch, rect).unwrap(), img);
        }

        #[test]
        fn resize_is_range_preserving(
            vals in proptest::collection::vec(0.0f64..1.0, 12), nh in 1usize..9, nw in 1usize..9,
        ) {
            let img = ImageTensor::new(1, 3, 4, vals.clone()).unwrap();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let r = img.resize_bilinear(nh, nw).unwrap();
            prop_assert!(r.data().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
        }
    }
}
