//! Image quality and segmentation overlap metrics.
//!
//! All functions are pure. Intensities are taken in `[0, 1]`.

use crate::error::{invalid, Result};
use crate::tensor::ImageTensor;

/// Default pixel cap for [`loe`].
pub const LOE_SAMPLE_CAP: usize = 10_000;

/// Reported by [`snr_dilated`] when the background variance is zero.
pub const SNR_SENTINEL_DB: f64 = 99.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(invalid(format!("mask data has {} values, expected {height}x{width}", data.len())));
        }
        Ok(Self { height, width, data })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height * width).map(|k| f(k / width, k % width)).collect();
        Self { height, width, data }
    }

    /// Pixels whose channel-mean intensity is at least `threshold`.
    pub fn from_image(img: &ImageTensor, threshold: f64) -> Self {
        let data = img.channel_mean().into_iter().map(|v| v >= threshold).collect();
        Self {
            height: img.height(),
            width: img.width(),
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    fn expect_dims(&self, height: usize, width: usize) -> Result<()> {
        if (self.height, self.width) != (height, width) {
            return Err(invalid(format!(
                "mask is {}x{}, expected {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }

    /// Dilation by the disk `dx^2 + dy^2 <= radius^2`.
    pub fn dilate_disk(&self, radius: usize) -> BinaryMask {
        let r = radius as isize;
        let offsets: Vec<(isize, isize)> = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
            .filter(|&(dy, dx)| dy * dy + dx * dx <= r * r)
            .collect();
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = BinaryMask::empty(self.height, self.width);
        for (k, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let (i, j) = ((k / self.width) as isize, (k % self.width) as isize);
            for &(dy, dx) in &offsets {
                let (y, x) = (i + dy, j + dx);
                if y >= 0 && y < h && x >= 0 && x < w {
                    out.data[(y * w + x) as usize] = true;
                }
            }
        }
        out
    }
}

fn check_same_dims(a: &ImageTensor, b: &ImageTensor) -> Result<()> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(invalid(format!(
            "image dimensions differ: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Indices of a uniformly strided subset of `0..m` of size `min(m, cap)`.
fn strided(m: usize, cap: usize) -> Vec<usize> {
    if m <= cap {
        return (0..m).collect();
    }
    (0..cap).map(|k| k * m / cap).collect()
}

/// Lightness order error over all ordered pixel pairs.
///
/// Lightness is the per-pixel channel maximum. With more than `sample_cap`
/// pixels, both sums run over the same strided subset of `sample_cap` pixels.
pub fn loe(original: &ImageTensor, enhanced: &ImageTensor, sample_cap: usize) -> Result<f64> {
    check_same_dims(original, enhanced)?;
    if sample_cap < 2 {
        return Err(invalid(format!("LOE sample cap must be >= 2, got {sample_cap}")));
    }
    let (la, lb) = (original.channel_max(), enhanced.channel_max());
    let idx = strided(la.len(), sample_cap);
    let a: Vec<f64> = idx.iter().map(|&k| la[k]).collect();
    let b: Vec<f64> = idx.iter().map(|&k| lb[k]).collect();
    let mut total = 0u64;
    for k in 0..a.len() {
        let (ak, bk) = (a[k], b[k]);
        total += a
            .iter()
            .zip(&b)
            .filter(|&(&ag, &bg)| (ak >= ag) != (bk >= bg))
            .count() as u64;
    }
    Ok(total as f64 / a.len() as f64)
}

/// [`loe`] without subsampling.
pub fn loe_exact(original: &ImageTensor, enhanced: &ImageTensor) -> Result<f64> {
    loe(original, enhanced, usize::MAX)
}

/// Shannon entropy in bits of the 256-bin histogram of channel-mean intensity.
pub fn entropy(img: &ImageTensor) -> f64 {
    let mut hist = [0u64; 256];
    let values = img.channel_mean();
    for v in &values {
        let bin = (v.clamp(0.0, 1.0) * 256.0) as usize;
        hist[bin.min(255)] += 1;
    }
    let n = values.len() as f64;
    hist.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum::<f64>()
        .max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SnrScale {
    /// `10 log10(mu^2 / sigma^2)`.
    #[default]
    Decibel,
    /// `mu / sigma`.
    Linear,
}

/// Signal-to-noise ratio of the traced `signal` against the ring of pixels
/// added by a disk dilation of the given radius.
pub fn snr_dilated(img: &ImageTensor, signal: &BinaryMask, radius: usize, scale: SnrScale) -> Result<f64> {
    signal.expect_dims(img.height(), img.width())?;
    if signal.count() == 0 {
        return Err(invalid("signal mask is empty"));
    }
    let dilated = signal.dilate_disk(radius);
    let intensity = img.channel_mean();
    let mut sig = Vec::new();
    let mut bg = Vec::new();
    for (k, &v) in intensity.iter().enumerate() {
        if signal.data[k] {
            sig.push(v);
        } else if dilated.data[k] {
            bg.push(v);
        }
    }
    if bg.is_empty() {
        return Err(invalid(format!("background ring at radius {radius} is empty")));
    }
    Ok(snr_from_regions(&sig, &bg, scale))
}

fn snr_from_regions(sig: &[f64], bg: &[f64], scale: SnrScale) -> f64 {
    let mu = sig.iter().sum::<f64>() / sig.len() as f64;
    let bg_mean = bg.iter().sum::<f64>() / bg.len() as f64;
    let flat = bg.iter().all(|&v| v == bg[0]);
    let var = if flat {
        0.0
    } else {
        bg.iter().map(|v| (v - bg_mean).powi(2)).sum::<f64>() / bg.len() as f64
    };
    match scale {
        SnrScale::Decibel if var == 0.0 => SNR_SENTINEL_DB,
        SnrScale::Decibel if mu == 0.0 => -SNR_SENTINEL_DB,
        SnrScale::Decibel => 10.0 * (mu * mu / var).log10(),
        SnrScale::Linear if var == 0.0 => f64::INFINITY,
        SnrScale::Linear => mu / var.sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub pa: f64,
    pub iou: f64,
    pub dice: f64,
}

/// Pixel accuracy, intersection-over-union and Dice of two masks.
pub fn overlap_metrics(pred: &BinaryMask, gt: &BinaryMask) -> Result<Overlap> {
    pred.expect_dims(gt.height, gt.width)?;
    let (mut inter, mut agree) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += usize::from(p && g);
        agree += usize::from(p == g);
    }
    let (np, ng) = (pred.count(), gt.count());
    let union = np + ng - inter;
    let total = pred.data.len();
    Ok(Overlap {
        pa: if total == 0 { 1.0 } else { agree as f64 / total as f64 },
        iou: if union == 0 { 1.0 } else { inter as f64 / union as f64 },
        dice: if np + ng == 0 { 1.0 } else { 2.0 * inter as f64 / (np + ng) as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;
    use proptest::prelude::*;

    fn gray(h: usize, w: usize, values: Vec<f64>) -> ImageTensor {
        ImageTensor::new(1, h, w, values).unwrap()
    }

    /// Pairwise definition, written out literally.
    fn loe_reference(a: &[f64], b: &[f64]) -> f64 {
        let m = a.len();
        let mut sum = 0.0;
        for k in 0..m {
            let mut rod = 0.0;
            for g in 0..m {
                let ta = u8::from(a[k] >= a[g]);
                let tb = u8::from(b[k] >= b[g]);
                rod += f64::from(ta ^ tb);
            }
            sum += rod;
        }
        sum / m as f64
    }

    #[test]
    fn two_pixel_inversion() {
        let a = gray(1, 2, vec![0.2, 0.8]);
        let b = gray(1, 2, vec![0.8, 0.2]);
        assert_eq!(loe_exact(&a, &b).unwrap(), 1.0);
        assert_eq!(loe_exact(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn lightness_is_channel_max() {
        let a = ImageTensor::new(3, 1, 2, vec![0.9, 0.1, 0.0, 0.0, 0.0, 0.5]).unwrap();
        let b = gray(1, 2, vec![0.9, 0.5]);
        assert_eq!(loe_exact(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn loe_rejects_bad_input() {
        let a = gray(1, 2, vec![0.2, 0.8]);
        assert!(loe(&a, &gray(2, 1, vec![0.2, 0.8]), 10).is_err());
        assert!(loe(&a, &a, 1).is_err());
    }

    #[test]
    fn subsampling_uses_cap() {
        let a = ImageTensor::from_fn(Shape::new(1, 40, 40), |_, i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0).unwrap();
        let b = ImageTensor::from_fn(Shape::new(1, 40, 40), |_, i, j| ((i * 3 + j * 5) % 11) as f64 / 11.0).unwrap();
        let idx = strided(1600, 100);
        let la: Vec<f64> = idx.iter().map(|&k| a.data()[k]).collect();
        let lb: Vec<f64> = idx.iter().map(|&k| b.data()[k]).collect();
        assert_eq!(loe(&a, &b, 100).unwrap(), loe_reference(&la, &lb));
        assert_eq!(loe_exact(&a, &b).unwrap(), loe_reference(a.data(), b.data()));
    }

    fn image_strategy() -> impl Strategy<Value = ImageTensor> {
        (1usize..9, 1usize..9)
            .prop_flat_map(|(h, w)| proptest::collection::vec(0.0f64..1.0, h * w).prop_map(move |d| gray(h, w, d)))
    }

    proptest! {
        #[test]
        fn loe_matches_reference(a in image_strategy(), seed in 0u64..1000) {
            let b = ImageTensor::from_fn(a.shape(), |_, i, j| (((i * 31 + j * 17) as u64 + seed) % 23) as f64 / 23.0).unwrap();
            prop_assert_eq!(loe_exact(&a, &b).unwrap(), loe_reference(a.data(), b.data()));
        }

        #[test]
        fn loe_is_symmetric(a in image_strategy(), shift in 0usize..50) {
            let b = ImageTensor::from_fn(a.shape(), |_, i, j| ((i * 5 + j * 11 + shift) % 13) as f64 / 13.0).unwrap();
            prop_assert_eq!(loe_exact(&a, &b).unwrap(), loe_exact(&b, &a).unwrap());
        }

        #[test]
        fn monotone_maps_preserve_order(a in image_strategy(), k in 0usize..4) {
            let maps: [fn(f64) -> f64; 4] = [|v| v.sqrt(), |v| v * v * v, |v| 0.5 * v + 0.1, |v| (3.0 * v).exp()];
            let b = a.map(maps[k]);
            prop_assert_eq!(loe_exact(&a, &b).unwrap(), 0.0);
        }

        #[test]
        fn entropy_bounds_and_permutation(a in image_strategy()) {
            let e = entropy(&a);
            prop_assert!((0.0..=8.0).contains(&e));
            let mut rev = a.data().to_vec();
            rev.reverse();
            let b = gray(a.height(), a.width(), rev);
            prop_assert!((entropy(&b) - e).abs() < 1e-12);
        }

        #[test]
        fn dice_dominates_iou(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..64)) {
            let n = bits.len();
            let p = BinaryMask::new(1, n, bits.iter().map(|b| b.0).collect()).unwrap();
            let g = BinaryMask::new(1, n, bits.iter().map(|b| b.1).collect()).unwrap();
            let o = overlap_metrics(&p, &g).unwrap();
            prop_assert!(o.dice >= o.iou - 1e-15);
            if o.iou > 0.0 && o.iou < 1.0 {
                prop_assert!(o.dice > o.iou);
            } else {
                prop_assert_eq!(o.dice, o.iou);
            }
        }
    }

    #[test]
    fn entropy_endpoints() {
        assert_eq!(entropy(&ImageTensor::filled(Shape::new(3, 4, 4), 0.3).unwrap()), 0.0);
        let two = gray(2, 2, vec![0.1, 0.9, 0.1, 0.9]);
        assert!((entropy(&two) - 1.0).abs() < 1e-12);
        let all = gray(16, 16, (0..256).map(|k| (k as f64 + 0.5) / 256.0).collect());
        assert!((entropy(&all) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_clamps_out_of_range() {
        let img = gray(1, 4, vec![-0.5, 0.0, 1.0, 1.5]);
        assert!((entropy(&img) - 1.0).abs() < 1e-12);
    }

    fn brute_force_snr(img: &ImageTensor, signal: &BinaryMask, radius: usize) -> f64 {
        let (h, w) = (img.height(), img.width());
        let r2 = (radius * radius) as isize;
        let intensity = img.channel_mean();
        let mut sig = Vec::new();
        let mut bg = Vec::new();
        for i in 0..h {
            for j in 0..w {
                if signal.get(i, j) {
                    sig.push(intensity[i * w + j]);
                    continue;
                }
                let near = (0..h).any(|a| {
                    (0..w).any(|b| {
                        let (di, dj) = (a as isize - i as isize, b as isize - j as isize);
                        signal.get(a, b) && di * di + dj * dj <= r2
                    })
                });
                if near {
                    bg.push(intensity[i * w + j]);
                }
            }
        }
        snr_from_regions(&sig, &bg, SnrScale::Decibel)
    }

    #[test]
    fn snr_hand_case() {
        // Centre pixel 0.8; its 4-neighbourhood holds 0.1, 0.2, 0.3, 0.4.
        let mut v = vec![0.0; 25];
        v[12] = 0.8;
        v[7] = 0.1;
        v[11] = 0.2;
        v[13] = 0.3;
        v[17] = 0.4;
        let img = gray(5, 5, v);
        let signal = BinaryMask::from_fn(5, 5, |i, j| i == 2 && j == 2);
        assert_eq!(signal.dilate_disk(1).count(), 5);
        // mean 0.25, variance (0.0225 + 0.0025 + 0.0025 + 0.0225) / 4 = 0.0125
        let expected = 10.0 * (0.64f64 / 0.0125).log10();
        let got = snr_dilated(&img, &signal, 1, SnrScale::Decibel).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        let lin = snr_dilated(&img, &signal, 1, SnrScale::Linear).unwrap();
        assert!((lin - 0.8 / 0.0125f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn snr_zero_variance_sentinel() {
        let img = ImageTensor::from_fn(Shape::new(1, 9, 9), |_, i, _| if i == 4 { 1.0 } else { 0.2 }).unwrap();
        let signal = BinaryMask::from_fn(9, 9, |i, _| i == 4);
        assert_eq!(snr_dilated(&img, &signal, 2, SnrScale::Decibel).unwrap(), SNR_SENTINEL_DB);
    }

    #[test]
    fn snr_errors() {
        let img = ImageTensor::filled(Shape::new(1, 3, 3), 0.5).unwrap();
        assert!(snr_dilated(&img, &BinaryMask::empty(3, 3), 1, SnrScale::Decibel).is_err());
        let full = BinaryMask::from_fn(3, 3, |_, _| true);
        assert!(snr_dilated(&img, &full, 1, SnrScale::Decibel).is_err());
        assert!(snr_dilated(&img, &BinaryMask::empty(2, 3), 1, SnrScale::Decibel).is_err());
    }

    #[test]
    fn snr_matches_brute_force_on_bright_line() {
        // Bright diagonal line; intensity falls off with distance.
        let (h, w) = (32, 32);
        let img = ImageTensor::from_fn(Shape::new(1, h, w), |_, i, j| {
            let d = (i as f64 - j as f64).abs();
            0.9 * (-d / 3.0).exp() + 0.02 * ((i * 7 + j * 3) % 5) as f64
        })
        .unwrap();
        let signal = BinaryMask::from_fn(h, w, |i, j| i == j);
        let mut last = f64::INFINITY;
        for r in [1, 3, 5, 7, 9] {
            let fast = snr_dilated(&img, &signal, r, SnrScale::Decibel).unwrap();
            let slow = brute_force_snr(&img, &signal, r);
            assert!((fast - slow).abs() < 1e-9, "radius {r}: {fast} vs {slow}");
            assert!(fast.is_finite());
            last = fast;
        }
        assert!(last.is_finite());
    }

    #[test]
    fn overlap_examples() {
        let a = BinaryMask::from_fn(4, 4, |i, j| i == 0 && j < 2);
        let o = overlap_metrics(&a, &a).unwrap();
        assert_eq!((o.pa, o.iou, o.dice), (1.0, 1.0, 1.0));

        let b = BinaryMask::from_fn(4, 4, |i, j| i == 3 && j < 2);
        let o = overlap_metrics(&a, &b).unwrap();
        assert_eq!((o.iou, o.dice), (0.0, 0.0));

        let p = BinaryMask::from_fn(4, 4, |i, _| i == 0);
        let g = BinaryMask::from_fn(4, 4, |i, j| i < 2 && j < 2);
        assert_eq!((p.count(), g.count()), (4, 4));
        let o = overlap_metrics(&p, &g).unwrap();
        assert!((o.iou - 2.0 / 6.0).abs() < 1e-15);
        assert_eq!(o.dice, 0.5);
        assert_eq!(o.pa, 0.75);

        let e = BinaryMask::empty(4, 4);
        let o = overlap_metrics(&e, &e).unwrap();
        assert_eq!((o.iou, o.dice), (1.0, 1.0));
        assert!(overlap_metrics(&e, &BinaryMask::empty(3, 4)).is_err());
    }
}
