//! A small 3x3 convolutional noise predictor and its `DNW1` weight format.
//!
//! File layout, little-endian throughout:
//!
//! ```text
//! magic        4 bytes   "DNW1"
//! layers       u32       1..=3
//! per layer    3 x u32   in_channels, out_channels, kernel (must be 3)
//! params       u32       total parameter count
//! data         f32 x params
//! ```
//!
//! Parameters are stored layer by layer: weights in `[out][in][ky][kx]`
//! order followed by `out` biases. The network input is the image with one
//! extra constant channel holding `t / T`; layers use stride 1 and reflect
//! padding, with ReLU between layers and none after the last.

use std::fs;
use std::path::Path;

use crate::error::{invalid, FormatError, Result};
use crate::predictor::NoisePredictor;
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;

pub const DNW_MAGIC: [u8; 4] = *b"DNW1";
const MAX_LAYERS: usize = 3;
const MAX_HIDDEN: usize = 32;
const KERNEL: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: KERNEL,
        }
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel + self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvDenoiser {
    layers: Vec<ConvLayer>,
    params: Vec<f64>,
}

fn validate(layers: &[ConvLayer]) -> std::result::Result<(), FormatError> {
    let bad = |m: String| Err(FormatError::Architecture(m));
    if layers.is_empty() || layers.len() > MAX_LAYERS {
        return bad(format!("expected 1..={MAX_LAYERS} layers, got {}", layers.len()));
    }
    if let Some(l) = layers.iter().find(|l| l.kernel != KERNEL) {
        return bad(format!("kernel size {} (only 3 supported)", l.kernel));
    }
    let image_channels = layers[layers.len() - 1].out_channels;
    if image_channels != 1 && image_channels != 3 {
        return bad(format!("output must have 1 or 3 channels, got {image_channels}"));
    }
    if layers[0].in_channels != image_channels + 1 {
        return bad(format!(
            "first layer takes {} channels, expected image channels + 1 = {}",
            layers[0].in_channels,
            image_channels + 1
        ));
    }
    for pair in layers.windows(2) {
        if pair[0].out_channels != pair[1].in_channels {
            return bad("layer channel counts do not chain".into());
        }
        if pair[0].out_channels > MAX_HIDDEN {
            return bad(format!("hidden width {} exceeds {MAX_HIDDEN}", pair[0].out_channels));
        }
    }
    Ok(())
}

impl ConvDenoiser {
    pub fn new(layers: Vec<ConvLayer>, params: Vec<f64>) -> Result<Self> {
        validate(&layers)?;
        let expected: usize = layers.iter().map(ConvLayer::param_count).sum();
        if expected != params.len() {
            return Err(FormatError::ParameterCount {
                expected,
                declared: params.len(),
            }
            .into());
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("denoiser parameters must be finite"));
        }
        Ok(Self { layers, params })
    }

    /// Network with every parameter zero.
    pub fn zeros(layers: Vec<ConvLayer>) -> Result<Self> {
        let n = layers.iter().map(ConvLayer::param_count).sum();
        Self::new(layers, vec![0.0; n])
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn image_channels(&self) -> usize {
        self.layers[self.layers.len() - 1].out_channels
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != DNW_MAGIC {
            return Err(FormatError::BadMagic {
                expected: DNW_MAGIC,
                found: magic,
            }
            .into());
        }
        let count = r.u32()? as usize;
        if count == 0 || count > MAX_LAYERS {
            return Err(FormatError::Architecture(format!("layer count {count}")).into());
        }
        let mut layers = Vec::with_capacity(count);
        for _ in 0..count {
            let (i, o, k) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
            layers.push(ConvLayer {
                in_channels: i,
                out_channels: o,
                kernel: k,
            });
        }
        validate(&layers)?;
        let declared = r.u32()? as usize;
        let expected: usize = layers.iter().map(ConvLayer::param_count).sum();
        if declared != expected {
            return Err(FormatError::ParameterCount { expected, declared }.into());
        }
        let params = r
            .take(4 * declared)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes(bytes.len() - r.pos).into());
        }
        Self::new(layers, params)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&DNW_MAGIC);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            for v in [l.in_channels, l.out_channels, l.kernel] {
                out.extend_from_slice(&(v as u32).to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for &p in &self.params {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode(&fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    fn forward(&self, input: Vec<Vec<f64>>, h: usize, w: usize) -> Vec<Vec<f64>> {
        let mut act = input;
        let mut offset = 0;
        for (n, layer) in self.layers.iter().enumerate() {
            let k = layer.kernel;
            let nw = layer.out_channels * layer.in_channels * k * k;
            let weights = &self.params[offset..offset + nw];
            let biases = &self.params[offset + nw..offset + nw + layer.out_channels];
            offset += nw + layer.out_channels;
            let last = n + 1 == self.layers.len();
            act = (0..layer.out_channels)
                .map(|o| {
                    let mut plane = vec![biases[o]; h * w];
                    for (ci, src) in act.iter().enumerate() {
                        let kern = &weights[(o * layer.in_channels + ci) * k * k..][..k * k];
                        for i in 0..h {
                            for j in 0..w {
                                let mut acc = 0.0;
                                for ky in 0..k {
                                    let si = reflect(i as isize + ky as isize - 1, h);
                                    for kx in 0..k {
                                        let sj = reflect(j as isize + kx as isize - 1, w);
                                        acc += kern[ky * k + kx] * src[si * w + sj];
                                    }
                                }
                                plane[i * w + j] += acc;
                            }
                        }
                    }
                    if !last {
                        plane.iter_mut().for_each(|v| *v = v.max(0.0));
                    }
                    plane
                })
                .collect();
        }
        act
    }
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as isize;
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

impl NoisePredictor for ConvDenoiser {
    fn predict(&self, x_t: &ImageTensor, t: usize, sched: &NoiseSchedule) -> Result<ImageTensor> {
        sched.check_step(t)?;
        let shape = x_t.shape();
        if shape.channels != self.image_channels() {
            return Err(invalid(format!(
                "denoiser expects {} channels, got {}",
                self.image_channels(),
                shape.channels
            )));
        }
        let plane = shape.pixels();
        let mut input: Vec<Vec<f64>> = x_t.data().chunks(plane).map(<[f64]>::to_vec).collect();
        input.push(vec![t as f64 / sched.steps() as f64; plane]);
        let out = self.forward(input, shape.height, shape.width);
        ImageTensor::new(shape.channels, shape.height, shape.width, out.concat())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(FormatError::Truncated {
                needed: self.pos + n,
                found: self.bytes.len(),
            }
            .into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
