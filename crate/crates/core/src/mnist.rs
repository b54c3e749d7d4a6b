//! MNIST in IDX format: loading, stratified subsets and per-class accuracy.
//!
//! IDX files start with a 4-byte big-endian magic (`0x00000803` for 3-d image
//! tensors, `0x00000801` for label vectors), followed by one 4-byte big-endian size
//! per dimension and then the raw unsigned bytes. Pixels are scaled by `1/255`.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, Batch, NetworkSpec, ParameterVector};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const NUM_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Images as an `N × dim` row-major matrix in `[0, 1]`, with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    split: Split,
}

impl Dataset {
    pub fn new(images: Vec<f64>, labels: Vec<usize>, dim: usize, split: Split) -> Result<Self> {
        // Batch::new checks row count and pixel range.
        Batch::new(&images, &labels, dim)?;
        if let Some(l) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::Ingest(format!("label {l} outside 0..{NUM_CLASSES}")));
        }
        Ok(Self {
            images,
            labels,
            dim,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch::new(&self.images, &self.labels, self.dim).expect("dataset invariants hold")
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut images = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        self.gather_into(indices, &mut images, &mut labels);
        Dataset {
            images,
            labels,
            dim: self.dim,
            split: self.split,
        }
    }

    pub(crate) fn gather_into(
        &self,
        indices: &[usize],
        images: &mut Vec<f64>,
        labels: &mut Vec<usize>,
    ) {
        images.clear();
        labels.clear();
        for &i in indices {
            images.extend_from_slice(&self.images[i * self.dim..(i + 1) * self.dim]);
            labels.push(self.labels[i]);
        }
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::Ingest(format!(
                "{}: truncated file while reading {what}",
                path.display()
            ))
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Raw image bytes plus `(count, rows, cols)`.
pub fn read_idx_images(path: &Path) -> Result<(Vec<u8>, usize, usize, usize)> {
    let bytes = read_file(path)?;
    let magic = read_u32(&bytes, 0, "magic", path)?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Ingest(format!(
            "{}: bad magic 0x{magic:08x} in images file, expected 0x{IMAGES_MAGIC:08x}",
            path.display()
        )));
    }
    let count = read_u32(&bytes, 4, "image count", path)? as usize;
    let rows = read_u32(&bytes, 8, "row count", path)? as usize;
    let cols = read_u32(&bytes, 12, "column count", path)? as usize;
    let expected = count * rows * cols;
    let pixels = &bytes[16..];
    if pixels.len() != expected {
        return Err(Error::Ingest(format!(
            "{}: truncated file: image count {count} × {rows}×{cols} needs {expected} pixel bytes, found {}",
            path.display(),
            pixels.len()
        )));
    }
    Ok((pixels.to_vec(), count, rows, cols))
}

pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = read_file(path)?;
    let magic = read_u32(&bytes, 0, "magic", path)?;
    if magic != LABELS_MAGIC {
        return Err(Error::Ingest(format!(
            "{}: bad magic 0x{magic:08x} in labels file, expected 0x{LABELS_MAGIC:08x}",
            path.display()
        )));
    }
    let count = read_u32(&bytes, 4, "label count", path)? as usize;
    let labels = &bytes[8..];
    if labels.len() != count {
        return Err(Error::Ingest(format!(
            "{}: truncated file: label count {count}, found {} label bytes",
            path.display(),
            labels.len()
        )));
    }
    Ok(labels.to_vec())
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_idx(images_path: &Path, labels_path: &Path, split: Split) -> Result<Dataset> {
    let (pixels, count, rows, cols) = read_idx_images(images_path)?;
    let labels = read_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::Ingest(format!(
            "count mismatch: {} has {count} images, {} has {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    if count == 0 {
        return Err(Error::Ingest(format!(
            "{}: image count is zero",
            images_path.display()
        )));
    }
    if let Some(l) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
        return Err(Error::Ingest(format!(
            "{}: label {l} outside 0..{NUM_CLASSES}",
            labels_path.display()
        )));
    }
    let images = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    Ok(Dataset {
        images,
        labels: labels.into_iter().map(usize::from).collect(),
        dim: rows * cols,
        split,
    })
}

/// Loads `(train, test)` from a directory holding the four standard MNIST file names.
pub fn load_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(
        &dir.join(TRAIN_IMAGES),
        &dir.join(TRAIN_LABELS),
        Split::Train,
    )?;
    let test = load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS), Split::Test)?;
    Ok((train, test))
}

/// Stratified sample of `n` rows without replacement, kept in original order.
///
/// Each class receives `n·N_c/N` rows rounded by largest remainder, so class
/// proportions match the source up to one sample per class.
pub fn subset(data: &Dataset, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || n > data.len() {
        return Err(Error::Config(format!(
            "subset size {n} must lie in 1..={}",
            data.len()
        )));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); NUM_CLASSES];
    for (i, &l) in data.labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let total = data.len();
    let mut quota: Vec<usize> = by_class.iter().map(|c| c.len() * n / total).collect();
    let mut remainders: Vec<(usize, usize)> = by_class
        .iter()
        .enumerate()
        .map(|(c, idx)| ((idx.len() * n) % total, c))
        .collect();
    remainders.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let missing = n - quota.iter().sum::<usize>();
    for &(_, c) in remainders.iter().take(missing) {
        quota[c] += 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(n);
    for (class_idx, q) in by_class.iter_mut().zip(quota) {
        class_idx.shuffle(&mut rng);
        chosen.extend_from_slice(&class_idx[..q]);
    }
    chosen.sort_unstable();
    Ok(data.select(&chosen))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassAccuracy {
    pub per_class: Vec<f64>,
    pub overall: f64,
    pub support: Vec<usize>,
}

impl PerClassAccuracy {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], num_classes: usize) -> Self {
        let mut support = vec![0usize; num_classes];
        let mut correct = vec![0usize; num_classes];
        for (&p, &y) in predictions.iter().zip(labels) {
            support[y] += 1;
            if p == y {
                correct[y] += 1;
            }
        }
        let per_class = correct
            .iter()
            .zip(&support)
            .map(|(&c, &s)| if s == 0 { 0.0 } else { c as f64 / s as f64 })
            .collect();
        let overall = correct.iter().sum::<usize>() as f64 / labels.len().max(1) as f64;
        Self {
            per_class,
            overall,
            support,
        }
    }
}

/// Arg-max accuracy per digit class and overall; ties go to the lowest class.
pub fn per_class_accuracy(
    spec: &NetworkSpec,
    params: &ParameterVector,
    data: &Dataset,
) -> Result<PerClassAccuracy> {
    let predictions = nn::predict(spec, params, &data.batch())?;
    Ok(PerClassAccuracy::from_predictions(
        &predictions,
        data.labels(),
        spec.num_classes().max(NUM_CLASSES),
    ))
}
