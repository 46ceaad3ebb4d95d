//! Grayscale conversion, gamma correction, CLAHE and PNG I/O.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::config::PreprocessConfig;
use crate::error::{Error, Result};

/// Row-major single-channel image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height, "pixel count");
        GrayImage { width, height, data }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Decoded 8-bit pixels, interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct Pixels {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<u8>,
}

fn from_dynamic(img: DynamicImage) -> Pixels {
    let (width, height) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(b) => Pixels { width, height, channels: 1, data: b.into_raw() },
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            Pixels { width, height, channels: 1, data: img.to_luma8().into_raw() }
        }
        other => Pixels { width, height, channels: 3, data: other.to_rgb8().into_raw() },
    }
}

/// Decodes PNG bytes.
pub fn decode_png(bytes: &[u8]) -> Result<Pixels> {
    let img = image::load(Cursor::new(bytes), ImageFormat::Png)
        .map_err(|e| Error::Format { what: "png", msg: e.to_string() })?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Format { what: "png", msg: "empty image".into() });
    }
    Ok(from_dynamic(img))
}

pub fn load_png(path: &Path) -> Result<Pixels> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes).map_err(|e| Error::io(path, e))
}

pub fn save_gray_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    image::save_buffer(path, data, width as u32, height as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::io(path, e))
}

pub fn save_rgb_png(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    image::save_buffer(path, data, width as u32, height as u32, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::io(path, e))
}

/// Luminosity grayscale on the 0-255 scale.
pub fn luminance(p: &Pixels) -> Vec<f64> {
    match p.channels {
        1 => p.data.iter().map(|&v| v as f64).collect(),
        _ => p
            .data
            .chunks_exact(p.channels)
            .map(|c| 0.299 * c[0] as f64 + 0.587 * c[1] as f64 + 0.114 * c[2] as f64)
            .collect(),
    }
}

/// `v -> v^gamma` on values in `[0, 1]`.
pub fn gamma_correct(values: &mut [f64], gamma: f64) {
    if gamma == 1.0 {
        return;
    }
    for v in values {
        *v = v.powf(gamma);
    }
}

/// Contrast-limited adaptive histogram equalization of 8-bit values.
///
/// The image is split into a `tiles x tiles` grid. Each tile's 256-bin
/// histogram is clipped at `clip * area / 256` with the excess spread evenly
/// over all bins; its scaled cumulative sum is the tile's mapping. Pixels
/// blend the mappings of the four nearest tile centres bilinearly.
pub fn clahe(src: &[u8], width: usize, height: usize, tiles: usize, clip: f64) -> Vec<u8> {
    let ty = tiles.clamp(1, height);
    let tx = tiles.clamp(1, width);
    let ys: Vec<usize> = (0..=ty).map(|i| i * height / ty).collect();
    let xs: Vec<usize> = (0..=tx).map(|i| i * width / tx).collect();
    let mut luts = vec![[0.0f64; 256]; ty * tx];
    for j in 0..ty {
        for i in 0..tx {
            let mut hist = [0.0f64; 256];
            for y in ys[j]..ys[j + 1] {
                for &v in &src[y * width + xs[i]..y * width + xs[i + 1]] {
                    hist[v as usize] += 1.0;
                }
            }
            let area = ((ys[j + 1] - ys[j]) * (xs[i + 1] - xs[i])) as f64;
            let limit = clip * area / 256.0;
            let mut excess = 0.0;
            for h in hist.iter_mut() {
                if *h > limit {
                    excess += *h - limit;
                    *h = limit;
                }
            }
            let bonus = excess / 256.0;
            let lut = &mut luts[j * tx + i];
            let mut acc = 0.0;
            for (b, h) in hist.iter().enumerate() {
                acc += h + bonus;
                lut[b] = acc * 255.0 / area;
            }
        }
    }
    let centres = |bounds: &[usize]| -> Vec<f64> {
        bounds.windows(2).map(|w| (w[0] + w[1]) as f64 / 2.0 - 0.5).collect()
    };
    let cy = centres(&ys);
    let cx = centres(&xs);
    let locate = |c: &[f64], p: f64| -> (usize, usize, f64) {
        if p <= c[0] {
            return (0, 0, 0.0);
        }
        let last = c.len() - 1;
        if p >= c[last] {
            return (last, last, 0.0);
        }
        let i = c.partition_point(|&v| v <= p) - 1;
        (i, i + 1, (p - c[i]) / (c[i + 1] - c[i]))
    };
    let mut out = vec![0u8; src.len()];
    for y in 0..height {
        let (y0, y1, wy) = locate(&cy, y as f64);
        for x in 0..width {
            let (x0, x1, wx) = locate(&cx, x as f64);
            let v = src[y * width + x] as usize;
            let top = (1.0 - wx) * luts[y0 * tx + x0][v] + wx * luts[y0 * tx + x1][v];
            let bottom = (1.0 - wx) * luts[y1 * tx + x0][v] + wx * luts[y1 * tx + x1][v];
            out[y * width + x] = ((1.0 - wy) * top + wy * bottom).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

/// Grayscale, gamma, CLAHE, rescale to `[0, 1]`.
pub fn preprocess(p: &Pixels, cfg: &PreprocessConfig) -> GrayImage {
    let mut v: Vec<f64> = luminance(p).into_iter().map(|g| g / 255.0).collect();
    gamma_correct(&mut v, cfg.gamma);
    let q: Vec<u8> = v.iter().map(|&x| (x * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let eq = clahe(&q, p.width, p.height, cfg.clahe_tiles, cfg.clahe_clip);
    GrayImage::new(p.width, p.height, eq.into_iter().map(|x| x as f32 / 255.0).collect())
}

/// Binary labels: 1 where the gray level exceeds 127.
pub fn binarize(p: &Pixels) -> Vec<u8> {
    luminance(p).into_iter().map(|v| u8::from(v > 127.0)).collect()
}

/// Values in `[0, 1]` to 8-bit gray levels.
pub fn to_u8(values: &[f32]) -> Vec<u8> {
    values.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}
