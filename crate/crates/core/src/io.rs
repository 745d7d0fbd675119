//! Image file I/O.
//!
//! `RTF1` layout (little-endian): the magic `b"RTF1"`, then `u32` channels,
//! height and width, then `channels * height * width` `f32` values in
//! channel-major order. PNG import/export is 8-bit grayscale or RGB.

use std::fs;
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{invalid, FormatError, Result};
use crate::tensor::{ImageTensor, Shape};

pub const RTF_MAGIC: [u8; 4] = *b"RTF1";
const RTF_HEADER: usize = 16;

pub fn encode_rtf(img: &ImageTensor) -> Vec<u8> {
    let s = img.shape();
    let mut out = Vec::with_capacity(RTF_HEADER + 4 * img.len());
    out.extend_from_slice(&RTF_MAGIC);
    for dim in [s.channels, s.height, s.width] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_rtf(bytes: &[u8]) -> Result<ImageTensor> {
    if bytes.len() < RTF_HEADER {
        return Err(FormatError::Truncated {
            needed: RTF_HEADER,
            found: bytes.len(),
        }
        .into());
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != RTF_MAGIC {
        return Err(FormatError::BadMagic {
            expected: RTF_MAGIC,
            found: magic,
        }
        .into());
    }
    let dim = |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let shape = Shape::new(dim(0), dim(1), dim(2));
    let needed = RTF_HEADER + 4 * shape.len();
    if bytes.len() < needed {
        return Err(FormatError::Truncated {
            needed,
            found: bytes.len(),
        }
        .into());
    }
    if bytes.len() > needed {
        return Err(FormatError::TrailingBytes(bytes.len() - needed).into());
    }
    let data = bytes[RTF_HEADER..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    ImageTensor::new(shape.channels, shape.height, shape.width, data)
}

pub fn write_rtf(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    fs::write(path, encode_rtf(img))?;
    Ok(())
}

pub fn read_rtf(path: impl AsRef<Path>) -> Result<ImageTensor> {
    decode_rtf(&fs::read(path)?)
}

/// Loads a PNG as values in `[0, 1]`. Images with colour become 3 channels,
/// grayscale stays 1; alpha is dropped.
pub fn read_png(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let img = image::open(path)?;
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    if gray {
        let g = img.to_luma8();
        let (w, h) = g.dimensions();
        let data = g.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        ImageTensor::new(1, h as usize, w as usize, data)
    } else {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let plane = (w * h) as usize;
        let mut data = vec![0.0; 3 * plane];
        for (k, p) in rgb.pixels().enumerate() {
            for c in 0..3 {
                data[c * plane + k] = p.0[c] as f64 / 255.0;
            }
        }
        ImageTensor::new(3, h as usize, w as usize, data)
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG; values are clamped to `[0, 1]` before quantizing.
pub fn write_png(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    let s = img.shape();
    let (w, h) = (s.width as u32, s.height as u32);
    match s.channels {
        1 => {
            let buf = GrayImage::from_fn(w, h, |x, y| image::Luma([quantize(img.get(0, y as usize, x as usize))]));
            buf.save(path)?;
        }
        3 => {
            let buf = RgbImage::from_fn(w, h, |x, y| {
                let (i, j) = (y as usize, x as usize);
                image::Rgb([quantize(img.get(0, i, j)), quantize(img.get(1, i, j)), quantize(img.get(2, i, j))])
            });
            buf.save(path)?;
        }
        c => return Err(invalid(format!("cannot write {c}-channel PNG"))),
    }
    Ok(())
}

/// Reads either format, choosing by the `RTF1` magic rather than the extension.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImageTensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(&RTF_MAGIC) {
        decode_rtf(&bytes)
    } else {
        read_png(path)
    }
}

/// Writes RTF1 when the extension is `.rtf`, PNG otherwise.
pub fn write_image(path: impl AsRef<Path>, img: &ImageTensor) -> Result<()> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("rtf") => write_rtf(path, img),
        _ => write_png(path, img),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;

    #[test]
    fn rtf_header_layout() {
        let img = ImageTensor::new(1, 1, 2, vec![0.5, 1.0]).unwrap();
        let bytes = encode_rtf(&img);
        assert_eq!(&bytes[..4], b"RTF1");
        assert_eq!(&bytes[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &0.5f32.to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn rtf_errors() {
        let img = ImageTensor::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let mut bytes = encode_rtf(&img);
        assert!(matches!(
            decode_rtf(&bytes[..20]),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        bytes.push(0);
        assert!(matches!(
            decode_rtf(&bytes),
            Err(Error::Format(FormatError::TrailingBytes(1)))
        ));
        bytes[0] = b'X';
        assert!(matches!(
            decode_rtf(&bytes),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
    }

    #[test]
    fn png_quantizes_to_8_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.png");
        let img = ImageTensor::from_fn(Shape::new(3, 3, 4), |c, i, j| ((c + i * 4 + j) % 7) as f64 / 6.0).unwrap();
        write_image(&path, &img).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img).unwrap() <= 0.5 / 255.0 + 1e-12);

        let gray = ImageTensor::filled(Shape::new(1, 2, 2), 2.0).unwrap();
        write_image(&path, &gray).unwrap();
        let back = read_image(&path).unwrap();
        assert_eq!(back.channels(), 1);
        assert!(back.data().iter().all(|&v| v == 1.0));
    }

    proptest! {
        #[test]
        fn rtf_roundtrip_is_f32_exact(vals in proptest::collection::vec(-4.0f32..4.0, 12)) {
            let img = ImageTensor::new(3, 2, 2, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let back = decode_rtf(&encode_rtf(&img)).unwrap();
            prop_assert_eq!(back, img);
        }
    }
}
