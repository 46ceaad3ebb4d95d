//! Datasets on disk and random patch sampling.
//!
//! A dataset directory holds `images/` and `labels/` with PNG files paired
//! by file stem, and optionally `masks/` with field-of-view masks under the
//! same stems. Label pixels above 127 are vessel.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use oce_autograd::Tensor;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::PreprocessConfig;
use crate::error::{Error, Result};
use crate::preprocess::{binarize, load_png, preprocess, GrayImage};

#[derive(Debug, Clone)]
pub struct Sample {
    pub name: String,
    pub image: GrayImage,
    /// `{0, 1}` per pixel.
    pub label: Vec<u8>,
    /// `{0, 1}` field-of-view mask, if the dataset provides one.
    pub fov: Option<Vec<u8>>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    /// Preprocessing applied to every image.
    pub record: PreprocessConfig,
}

/// PNG files of a directory keyed by stem, sorted.
pub fn png_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = BTreeMap::new();
    for entry in rd {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

/// Pairs two stem maps; unpaired stems are an error naming them.
pub fn pair_stems<'a>(
    left: &'a BTreeMap<String, PathBuf>,
    right: &'a BTreeMap<String, PathBuf>,
) -> Result<Vec<(&'a str, &'a Path, &'a Path)>> {
    let unpaired: Vec<&str> = left
        .keys()
        .filter(|k| !right.contains_key(*k))
        .chain(right.keys().filter(|k| !left.contains_key(*k)))
        .map(String::as_str)
        .collect();
    if !unpaired.is_empty() {
        return Err(Error::Io { path: PathBuf::new(), msg: format!("unpaired files: {}", unpaired.join(", ")) });
    }
    Ok(left.iter().map(|(k, a)| (k.as_str(), a.as_path(), right[k].as_path())).collect())
}

pub fn load_dataset(dir: &Path, record: &PreprocessConfig) -> Result<Dataset> {
    let images_dir = dir.join("images");
    let labels_dir = dir.join("labels");
    for d in [&images_dir, &labels_dir] {
        if !d.is_dir() {
            return Err(Error::io(d.clone(), "directory not found"));
        }
    }
    let images = png_files(&images_dir)?;
    let labels = png_files(&labels_dir)?;
    if images.is_empty() {
        return Err(Error::io(images_dir, "no PNG images"));
    }
    let masks_dir = dir.join("masks");
    let masks = if masks_dir.is_dir() { Some(png_files(&masks_dir)?) } else { None };
    let mut samples = Vec::new();
    for (stem, img_path, label_path) in pair_stems(&images, &labels)? {
        let px = load_png(img_path)?;
        let lb = load_png(label_path)?;
        if (px.width, px.height) != (lb.width, lb.height) {
            return Err(Error::io(label_path, "label size differs from image size"));
        }
        let fov = match masks.as_ref().and_then(|m| m.get(stem)) {
            Some(p) => {
                let m = load_png(p)?;
                if (m.width, m.height) != (px.width, px.height) {
                    return Err(Error::io(p, "mask size differs from image size"));
                }
                Some(binarize(&m))
            }
            None => None,
        };
        samples.push(Sample { name: stem.to_string(), image: preprocess(&px, record), label: binarize(&lb), fov });
    }
    Ok(Dataset { samples, record: *record })
}

/// Top-left corner of a patch inside image `image`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchIndex {
    pub image: usize,
    pub y: usize,
    pub x: usize,
}

/// `n` patch positions drawn uniformly over images and valid corners.
pub fn sample_patches(sizes: &[(usize, usize)], n: usize, size: usize, seed: u64) -> Result<Vec<PatchIndex>> {
    if sizes.is_empty() {
        return Err(Error::Contract("no images to sample from".into()));
    }
    if let Some((i, &(w, h))) = sizes.iter().enumerate().find(|(_, &(w, h))| w < size || h < size) {
        return Err(Error::Contract(format!("image {i} ({w}x{h}) is smaller than the {size}x{size} patch")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let image = rng.random_range(0..sizes.len());
            let (w, h) = sizes[image];
            PatchIndex { image, y: rng.random_range(0..=h - size), x: rng.random_range(0..=w - size) }
        })
        .collect())
}

/// In-memory patches: inputs `(n, 1, s, s)` flattened and labels in the
/// same order.
#[derive(Debug, Clone, Default)]
pub struct PatchSet {
    pub size: usize,
    pub inputs: Vec<f32>,
    pub labels: Vec<u8>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        if self.size == 0 {
            0
        } else {
            self.labels.len() / (self.size * self.size)
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extract(dataset: &Dataset, index: &[PatchIndex], size: usize) -> Self {
        let mut set = PatchSet { size, inputs: Vec::new(), labels: Vec::new() };
        for p in index {
            let s = &dataset.samples[p.image];
            let w = s.image.width;
            for y in p.y..p.y + size {
                let row = y * w + p.x;
                set.inputs.extend_from_slice(&s.image.data[row..row + size]);
                set.labels.extend_from_slice(&s.label[row..row + size]);
            }
        }
        set
    }

    /// Patches at the given positions within this set.
    pub fn select(&self, which: &[usize]) -> Self {
        let ss = self.size * self.size;
        let mut out = PatchSet { size: self.size, inputs: Vec::new(), labels: Vec::new() };
        for &i in which {
            out.inputs.extend_from_slice(&self.inputs[i * ss..(i + 1) * ss]);
            out.labels.extend_from_slice(&self.labels[i * ss..(i + 1) * ss]);
        }
        out
    }

    /// The trailing `fraction` of patches as a second set.
    pub fn split_tail(&self, fraction: f64) -> (Self, Self) {
        let n = self.len();
        let tail = ((n as f64) * fraction).round() as usize;
        let tail = tail.min(n.saturating_sub(1));
        let head: Vec<usize> = (0..n - tail).collect();
        let rest: Vec<usize> = (n - tail..n).collect();
        (self.select(&head), self.select(&rest))
    }

    pub fn batch(&self, range: std::ops::Range<usize>) -> (Tensor<f32>, &[u8]) {
        let ss = self.size * self.size;
        let x = Tensor::new(&[range.len(), 1, self.size, self.size], self.inputs[range.start * ss..range.end * ss].to_vec())
            .expect("patch extents");
        (x, &self.labels[range.start * ss..range.end * ss])
    }

    pub fn shuffled(&self, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.shuffle(rng);
        self.select(&order)
    }
}
