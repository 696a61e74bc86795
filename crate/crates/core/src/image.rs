//! Line image ingestion: PGM (and optionally PNG) decoding, height
//! normalization and pixel scaling.
//!
//! Resizing is bilinear with half-pixel centers: output pixel `i` samples
//! source coordinate `(i + 0.5) * in / out - 0.5`, clamped to the image.

use std::path::Path;

use crate::backbone::INPUT_HEIGHT;
use crate::chunking::{pad_image, PaddingPolicy};
use crate::error::{Error, Result};
use crate::tensor::{Rng, Tensor};

/// 8-bit grayscale raster, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::Input(format!(
                "{} pixels do not form a {width}×{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> u8) -> Self {
        let pixels = (0..width * height).map(|i| f(i % width, i / width)).collect();
        Self { width, height, pixels }
    }

    /// Uniform random pixels, reproducible from `seed`.
    pub fn noise(width: usize, height: usize, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        let pixels = (0..width * height).map(|_| rng.below(256) as u8).collect();
        Self { width, height, pixels }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

/// Parses a binary PGM (`P5`, maxval 255).
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(Error::Format("PGM header ends early".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("not a binary PGM (P5) file".into()));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| Error::Format(format!("PGM {what} {t:?} is not a number")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::Format("PGM has zero size".into()));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = &bytes[(pos + 1).min(bytes.len())..];
    let need = width * height;
    if data.len() < need {
        return Err(Error::Format(format!("PGM raster has {} of {need} bytes", data.len())));
    }
    GrayImage::new(width, height, data[..need].to_vec())
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("PNG: {e}")))?
        .into_luma8();
    let (w, h) = img.dimensions();
    GrayImage::new(w as usize, h as usize, img.into_raw())
}

pub fn read_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"\x89PNG") {
        #[cfg(feature = "png")]
        return decode_png(&bytes);
        #[cfg(not(feature = "png"))]
        return Err(Error::Format(format!(
            "{}: PNG input needs the `png` feature",
            path.display()
        )));
    }
    decode_pgm(&bytes)
}

/// Height-normalized line, `[40×W×1]` in `[-1, 1]`, `W` a multiple of 4.
#[derive(Clone, Debug, PartialEq)]
pub struct LineImage {
    pub tensor: Tensor,
    /// Width after resizing, before padding to a multiple of 4.
    pub content_width: usize,
}

impl LineImage {
    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    /// Wraps an already normalized `[40×W×1]` tensor.
    pub fn from_tensor(tensor: Tensor) -> Result<Self> {
        match tensor.shape() {
            &[INPUT_HEIGHT, w, 1] if w > 0 && w % 4 == 0 => Ok(Self {
                content_width: w,
                tensor,
            }),
            s => Err(Error::Input(format!("line tensor must be [40×W×1] with W a positive multiple of 4, got {s:?}"))),
        }
    }

    pub fn from_gray(img: &GrayImage) -> Result<Self> {
        let new_w = ((img.width as f64 * INPUT_HEIGHT as f64 / img.height as f64).round() as usize).max(1);
        let plane: Vec<f32> = img.pixels.iter().map(|&p| p as f32).collect();
        let resized = resize_bilinear(&plane, img.width, img.height, new_w, INPUT_HEIGHT);
        let normalized: Vec<f32> = resized.iter().map(|&p| p / 127.5 - 1.0).collect();
        let t = Tensor::new(vec![INPUT_HEIGHT, new_w, 1], normalized)?;
        let padded = new_w.next_multiple_of(4);
        let tensor = pad_image(&t, 0, padded - new_w, PaddingPolicy::EdgeReplicate)?;
        Ok(Self {
            tensor,
            content_width: new_w,
        })
    }
}

pub fn load_line_image(path: impl AsRef<Path>) -> Result<LineImage> {
    LineImage::from_gray(&read_gray(path)?)
}

fn sample_coords(out: usize, input: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of a row-major `h×w` plane to `out_h×out_w`.
pub fn resize_bilinear(plane: &[f32], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f32> {
    let xs = sample_coords(out_w, w);
    let ys = sample_coords(out_h, h);
    let mut out = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
            let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Stretches or squeezes a `[40×W×1]` line to `[40×width×1]`.
pub fn resize_width(line: &Tensor, width: usize) -> Result<Tensor> {
    let (h, w) = match line.shape() {
        &[h, w, 1] => (h, w),
        s => return Err(Error::Dimension(format!("expected [H×W×1], got {s:?}"))),
    };
    if width == 0 {
        return Err(Error::Parameter("target width must be positive".into()));
    }
    Tensor::new(vec![h, width, 1], resize_bilinear(line.data(), w, h, width, h))
}
