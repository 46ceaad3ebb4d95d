//! Whole-image inference by overlapping windows.

use oce_autograd::Tensor;

use crate::error::Result;
use crate::model::Model;
use crate::nn::Mode;
use crate::preprocess::GrayImage;

/// Maps a batch `(B, 1, s, s)` of patches to per-pixel vessel
/// probabilities of the same shape.
pub trait PatchPredictor {
    fn predict(&mut self, batch: &Tensor<f32>) -> Result<Tensor<f32>>;

    /// Confidence map of the refinement stage, `(B, 1, s, s)`, when the
    /// predictor has one.
    fn refinement_confidence(&mut self, _batch: &Tensor<f32>) -> Result<Option<Tensor<f32>>> {
        Ok(None)
    }
}

impl PatchPredictor for Model<f32> {
    fn predict(&mut self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        self.vessel_probability(batch)
    }

    fn refinement_confidence(&mut self, batch: &Tensor<f32>) -> Result<Option<Tensor<f32>>> {
        let (mut s, net) = self.session(Mode::Eval);
        let x = s.input(batch.clone());
        let out = net.forward(&mut s, x)?;
        Ok(out.uarm.map(|p| s.value(p.prob).clone()))
    }
}

/// Window origins along one axis: every `stride` from 0, plus a final window
/// flush with the far edge.
pub fn window_origins(len: usize, size: usize, stride: usize) -> Vec<usize> {
    if len <= size {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..=len - size).step_by(stride.max(1)).collect();
    if *v.last().expect("non-empty") != len - size {
        v.push(len - size);
    }
    v
}

/// Number of windows covering each pixel.
pub fn coverage(width: usize, height: usize, size: usize, stride: usize) -> Vec<u32> {
    let (pw, ph) = (width.max(size), height.max(size));
    let mut counts = vec![0u32; pw * ph];
    for &y0 in &window_origins(ph, size, stride) {
        for &x0 in &window_origins(pw, size, stride) {
            for y in y0..y0 + size {
                for c in &mut counts[y * pw + x0..y * pw + x0 + size] {
                    *c += 1;
                }
            }
        }
    }
    crop(&counts, pw, width, height)
}

fn crop<T: Copy>(data: &[T], stride: usize, width: usize, height: usize) -> Vec<T> {
    (0..height).flat_map(|y| data[y * stride..y * stride + width].iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StitchedMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
    /// Windows covering each pixel.
    pub counts: Vec<u32>,
}

fn stitch(
    image: &GrayImage,
    size: usize,
    stride: usize,
    batch: usize,
    mut run: impl FnMut(&Tensor<f32>) -> Result<Option<Tensor<f32>>>,
) -> Result<Option<StitchedMap>> {
    // images smaller than a window are zero-padded at the bottom and right
    let (pw, ph) = (image.width.max(size), image.height.max(size));
    let mut padded = vec![0f32; pw * ph];
    for y in 0..image.height {
        padded[y * pw..y * pw + image.width].copy_from_slice(&image.data[y * image.width..(y + 1) * image.width]);
    }
    let mut origins = Vec::new();
    for &y in &window_origins(ph, size, stride) {
        for &x in &window_origins(pw, size, stride) {
            origins.push((y, x));
        }
    }
    let mut sum = vec![0f64; pw * ph];
    let mut counts = vec![0u32; pw * ph];
    for chunk in origins.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * size * size);
        for &(y0, x0) in chunk {
            for y in y0..y0 + size {
                data.extend_from_slice(&padded[y * pw + x0..y * pw + x0 + size]);
            }
        }
        let x = Tensor::new(&[chunk.len(), 1, size, size], data).expect("window extents");
        let Some(p) = run(&x)? else { return Ok(None) };
        for (k, &(y0, x0)) in chunk.iter().enumerate() {
            let win = &p.data()[k * size * size..(k + 1) * size * size];
            for dy in 0..size {
                let row = (y0 + dy) * pw + x0;
                for dx in 0..size {
                    sum[row + dx] += win[dy * size + dx] as f64;
                    counts[row + dx] += 1;
                }
            }
        }
    }
    let values: Vec<f32> = sum.iter().zip(&counts).map(|(&s, &c)| (s / c as f64) as f32).collect();
    Ok(Some(StitchedMap {
        width: image.width,
        height: image.height,
        values: crop(&values, pw, image.width, image.height),
        counts: crop(&counts, pw, image.width, image.height),
    }))
}

/// Vessel probability per pixel, averaged over every covering window.
pub fn infer_full_image<P: PatchPredictor + ?Sized>(
    predictor: &mut P,
    image: &GrayImage,
    size: usize,
    stride: usize,
    batch: usize,
) -> Result<StitchedMap> {
    let map = stitch(image, size, stride, batch, |x| predictor.predict(x).map(Some))?;
    Ok(map.expect("predict always yields a map"))
}

/// Stitched refinement confidence, if the predictor exposes one.
pub fn infer_confidence<P: PatchPredictor + ?Sized>(
    predictor: &mut P,
    image: &GrayImage,
    size: usize,
    stride: usize,
    batch: usize,
) -> Result<Option<StitchedMap>> {
    stitch(image, size, stride, batch, |x| predictor.refinement_confidence(x))
}

/// `{0, 1}` mask of probabilities at or above `threshold`.
pub fn threshold(values: &[f32], threshold: f64) -> Vec<u8> {
    values.iter().map(|&v| u8::from(v as f64 >= threshold)).collect()
}
