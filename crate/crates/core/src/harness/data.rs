//! Datasets: seeded Gaussian blobs and IDX image files.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng_from_seed, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
    pub normalization: Option<Normalization>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Dataset(format!(
                "{} samples but {} labels",
                inputs.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes,
            });
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split,
            normalization: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    /// Rows and labels at the given indices.
    pub fn batch(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Geometry of a blob dataset.
///
/// Class `k` has mean `(separation / 2) · s_k` for a seeded sign pattern
/// `s_k ∈ {−1, +1}^dim` (with two classes, `s_1 = −s_0`), so distinct class
/// means sit at ℓ∞ distance exactly `separation`. Noise is `N(0, noise_std²)`
/// per coordinate.
///
/// With `strong_dims = Some(k)` only the first `k` coordinates carry the full
/// `separation / 2`; the rest are scaled by `weak_scale`. Patterns are distinct
/// on the strong block, so the ℓ∞ distance between means is still
/// `separation` as long as `weak_scale ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobSpec {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    pub separation: f64,
    #[serde(default = "one")]
    pub noise_std: f64,
    #[serde(default)]
    pub strong_dims: Option<usize>,
    #[serde(default = "one")]
    pub weak_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl BlobSpec {
    /// Sign-pattern means on every coordinate, unit noise.
    pub fn isotropic(n: usize, dim: usize, classes: usize, separation: f64) -> Self {
        Self {
            n,
            dim,
            classes,
            separation,
            noise_std: 1.0,
            strong_dims: None,
            weak_scale: 1.0,
        }
    }

    fn strong(&self) -> usize {
        self.strong_dims.unwrap_or(self.dim).min(self.dim)
    }
}

/// Balanced Gaussian blobs with unit noise; see [`BlobSpec`].
pub fn make_blobs(n: usize, dim: usize, classes: usize, separation: f64, seed: u64) -> Result<Dataset> {
    make_blobs_with(&BlobSpec::isotropic(n, dim, classes, separation), seed, Split::Train)
}

/// Class means for a blob spec; the same seed always yields the same means.
pub fn blob_means(spec: &BlobSpec, seed: u64) -> Result<Matrix> {
    if spec.classes < 2 {
        return Err(Error::Dataset(format!("need at least 2 classes, got {}", spec.classes)));
    }
    let strong = spec.strong();
    if strong == 0 {
        return Err(Error::Dataset("need at least one strong dimension".into()));
    }
    if !(0.0..=1.0).contains(&spec.weak_scale) {
        return Err(Error::Dataset(format!("weak_scale must lie in [0, 1], got {}", spec.weak_scale)));
    }
    if strong < 63 && (1u64 << strong) < spec.classes as u64 {
        return Err(Error::Dataset(format!(
            "{} classes do not fit distinct sign patterns in {} dimensions",
            spec.classes, strong
        )));
    }
    let mut rng = rng_from_seed(seed);
    let half = spec.separation / 2.0;
    let mut patterns: Vec<Vec<f64>> = Vec::with_capacity(spec.classes);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..spec.dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
    };
    patterns.push(draw(&mut rng));
    if spec.classes == 2 {
        patterns.push(patterns[0].iter().map(|v| -v).collect());
    } else {
        while patterns.len() < spec.classes {
            let p = draw(&mut rng);
            if !patterns.iter().any(|q| q[..strong] == p[..strong]) {
                patterns.push(p);
            }
        }
    }
    Ok(Matrix::from_fn(spec.classes, spec.dim, |k, j| {
        let scale = if j < strong { half } else { half * spec.weak_scale };
        scale * patterns[k][j]
    }))
}

/// Means are drawn from `seed`; samples from an independent stream of the
/// same seed, so train and test splits built with different `sample_seed`s
/// share their class means.
pub fn make_blobs_split(spec: &BlobSpec, mean_seed: u64, sample_seed: u64, split: Split) -> Result<Dataset> {
    if spec.n == 0 {
        return Err(Error::Dataset("n must be positive".into()));
    }
    if !(spec.separation > 0.0) || !(spec.noise_std >= 0.0) {
        return Err(Error::Dataset(format!(
            "separation must be positive and noise nonnegative: {spec:?}"
        )));
    }
    let means = blob_means(spec, mean_seed)?;
    let mut rng = rng_from_seed(sample_seed);
    let mut labels: Vec<usize> = (0..spec.n).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let inputs = Matrix::from_fn(spec.n, spec.dim, |r, c| {
        let z: f64 = StandardNormal.sample(&mut rng);
        means.get(labels[r], c) + spec.noise_std * z
    });
    Dataset::new(inputs, labels, spec.classes, split)
}

pub fn make_blobs_with(spec: &BlobSpec, seed: u64, split: Split) -> Result<Dataset> {
    make_blobs_split(spec, seed, seed.wrapping_add(1), split)
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Dataset(format!("truncated IDX header ({what})")))
}

/// Parses an unsigned-byte IDX image file into `(count, pixels per image, pixels)`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Dataset(format!(
            "bad IDX image magic {magic:#010x} (expected {IDX_IMAGES_MAGIC:#010x})"
        )));
    }
    let count = be_u32(bytes, 4, "count")? as usize;
    let rows = be_u32(bytes, 8, "rows")? as usize;
    let cols = be_u32(bytes, 12, "cols")? as usize;
    let pixels = rows * cols;
    let body = &bytes[16..];
    if body.len() != count * pixels {
        return Err(Error::Dataset(format!(
            "IDX image body has {} bytes, header promises {count}x{rows}x{cols}",
            body.len()
        )));
    }
    Ok((count, pixels, body))
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = be_u32(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Dataset(format!(
            "bad IDX label magic {magic:#010x} (expected {IDX_LABELS_MAGIC:#010x})"
        )));
    }
    let count = be_u32(bytes, 4, "count")? as usize;
    let body = &bytes[8..];
    if body.len() != count {
        return Err(Error::Dataset(format!(
            "IDX label body has {} bytes, header promises {count}",
            body.len()
        )));
    }
    Ok(body)
}

/// Scalar normalization applied to pixels scaled into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelNormalization {
    pub mean: f64,
    pub std: f64,
}

/// Loads at most `max_n` samples; each pixel becomes `(p / 255 − mean) / std`.
pub fn load_idx_subset(
    images_path: &Path,
    labels_path: &Path,
    max_n: usize,
    normalization: PixelNormalization,
    split: Split,
) -> Result<Dataset> {
    if !(normalization.std > 0.0) {
        return Err(Error::Dataset(format!("normalization std must be positive, got {}", normalization.std)));
    }
    let img_bytes = fs::read(images_path).map_err(|e| Error::io(images_path, e))?;
    let lbl_bytes = fs::read(labels_path).map_err(|e| Error::io(labels_path, e))?;
    let (count, pixels, body) = parse_idx_images(&img_bytes)?;
    let labels = parse_idx_labels(&lbl_bytes)?;
    if labels.len() != count {
        return Err(Error::Dataset(format!(
            "{count} images but {} labels",
            labels.len()
        )));
    }
    let n = count.min(max_n);
    let inputs = Matrix::from_fn(n, pixels, |r, c| {
        (body[r * pixels + c] as f64 / 255.0 - normalization.mean) / normalization.std
    });
    let labels: Vec<usize> = labels[..n].iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(1, |m| m + 1).max(2);
    let mut ds = Dataset::new(inputs, labels, classes, split)?;
    ds.normalization = Some(Normalization {
        mean: vec![normalization.mean; pixels],
        std: vec![normalization.std; pixels],
    });
    Ok(ds)
}

/// Encodes images and labels in IDX format (used for fixtures and tests).
pub fn encode_idx(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        img.extend_from_slice(im);
    }
    let mut lbl = Vec::new();
    lbl.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    (img, lbl)
}
