//! Image preprocessing, local entropy and patch extraction.
//!
//! Patches are addressed by the top-left corner of a fully interior
//! `side x side` window, so an image with `rows x cols` pixels has
//! `(rows - side + 1) * (cols - side + 1)` valid anchors. Patch vectors are
//! the column-major vectorization of the window, as raw intensities.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// BT.601 luma weights.
const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// Patches whose intensity variance falls below this value are considered
/// homogeneous and never used for training.
pub const HOMOGENEITY_THRESHOLD: f64 = 1.0;

/// 8-bit single channel image stored row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    rows: usize,
    cols: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(rows: usize, cols: usize, pixels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::param("rows/cols", "image must be non-empty"));
        }
        if pixels.len() != rows * cols {
            return Err(Error::dims(rows * cols, pixels.len()));
        }
        Ok(Self { rows, cols, pixels })
    }

    pub fn filled(rows: usize, cols: usize, value: u8) -> Result<Self> {
        Self::new(rows, cols, vec![value; rows * cols])
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut pixels = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                pixels.push(f(r, c));
            }
        }
        Self::new(rows, cols, pixels)
    }

    /// Builds an image from interleaved 8-bit samples with one (gray) or
    /// three (RGB) channels.
    pub fn from_channels(rows: usize, cols: usize, channels: usize, data: &[u8]) -> Result<Self> {
        if data.len() != rows * cols * channels {
            return Err(Error::dims(rows * cols * channels, data.len()));
        }
        match channels {
            1 => Self::new(rows, cols, data.to_vec()),
            3 => Self::new(
                rows,
                cols,
                data.chunks_exact(3).map(|p| luma(p[0], p[1], p[2])).collect(),
            ),
            other => Err(Error::UnsupportedChannels(other)),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.pixels[row * self.cols + col]
    }

    pub fn same_shape(&self, other: &GrayImage) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn check_same_shape(&self, other: &GrayImage) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dims(
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ))
        }
    }

    /// Number of full `side x side` windows.
    pub fn anchor_count(&self, side: usize) -> usize {
        if side == 0 || side > self.rows || side > self.cols {
            0
        } else {
            (self.rows - side + 1) * (self.cols - side + 1)
        }
    }

    fn check_patch_side(&self, side: usize) -> Result<()> {
        if side == 0 {
            return Err(Error::param("patch_side", "must be positive"));
        }
        if side > self.rows || side > self.cols {
            return Err(Error::PatchTooLarge {
                side,
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok(())
    }

    /// Column-major vectorization of the window anchored at `anchor`.
    pub fn patch_vector(&self, anchor: Anchor, side: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(side * side);
        for c in 0..side {
            for r in 0..side {
                out.push(f64::from(self.get(anchor.row + r, anchor.col + c)));
            }
        }
        out
    }

    /// Writes a binary PGM (P5).
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write!(file, "P5\n{} {}\n255\n", self.cols, self.rows)?;
        file.write_all(&self.pixels)?;
        file.flush()?;
        Ok(())
    }
}

/// Rounded BT.601 luma of an RGB triple.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let y = LUMA_WEIGHTS[0] * f64::from(r) + LUMA_WEIGHTS[1] * f64::from(g) + LUMA_WEIGHTS[2] * f64::from(b);
    y.round().clamp(0.0, 255.0) as u8
}

/// Converts a decoded image to grayscale. Gray input passes through
/// unchanged; 16-bit input is first reduced to 8 bits.
pub fn to_grayscale(image: &image::DynamicImage) -> Result<GrayImage> {
    use image::DynamicImage as D;
    let (w, h) = (image.width() as usize, image.height() as usize);
    match image {
        D::ImageLuma8(buf) => GrayImage::from_channels(h, w, 1, buf.as_raw()),
        D::ImageRgb8(buf) => GrayImage::from_channels(h, w, 3, buf.as_raw()),
        D::ImageLuma16(_) => GrayImage::from_channels(h, w, 1, image.to_luma8().as_raw()),
        D::ImageRgb16(_) | D::ImageRgb32F(_) => {
            GrayImage::from_channels(h, w, 3, image.to_rgb8().as_raw())
        }
        other => Err(Error::UnsupportedChannels(other.color().channel_count() as usize)),
    }
}

/// Reads a PNG, BMP, JPEG, TIFF or binary PGM/PPM file as grayscale.
pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let decoded = image::open(path).map_err(|source| match source {
        image::ImageError::IoError(e) => Error::Io(e),
        source => Error::Image {
            path: path.to_path_buf(),
            source,
        },
    })?;
    to_grayscale(&decoded)
}

/// Viewing-distance scale factor `max(1, round(min(rows, cols) / 256))`.
pub fn downsample_factor(image: &GrayImage) -> usize {
    let g = image.rows.min(image.cols) as f64;
    ((g / 256.0).round() as usize).max(1)
}

/// Box-averages disjoint `factor x factor` blocks, dropping incomplete
/// trailing rows and columns.
pub fn downsample(image: &GrayImage, factor: usize) -> Result<GrayImage> {
    if factor == 0 {
        return Err(Error::param("factor", "must be at least 1"));
    }
    if factor == 1 {
        return Ok(image.clone());
    }
    if factor > image.rows || factor > image.cols {
        return Err(Error::param(
            "factor",
            format!("{factor} exceeds image size {}x{}", image.rows, image.cols),
        ));
    }
    let rows = image.rows / factor;
    let cols = image.cols / factor;
    let area = (factor * factor) as f64;
    GrayImage::from_fn(rows, cols, |r, c| {
        let mut sum = 0u64;
        for dr in 0..factor {
            let base = (r * factor + dr) * image.cols + c * factor;
            sum += image.pixels[base..base + factor].iter().map(|&p| u64::from(p)).sum::<u64>();
        }
        (sum as f64 / area).round() as u8
    })
}

/// Top-left corner of a patch window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Anchor {
    pub row: usize,
    pub col: usize,
}

/// Shannon entropy (bits) of the intensity histogram of every full window.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyMap {
    rows: usize,
    cols: usize,
    side: usize,
    values: Vec<f64>,
}

impl EntropyMap {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn patch_side(&self) -> usize {
        self.side
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, anchor: Anchor) -> f64 {
        self.values[anchor.row * self.cols + anchor.col]
    }

    pub fn anchor(&self, index: usize) -> Anchor {
        Anchor {
            row: index / self.cols,
            col: index % self.cols,
        }
    }

    /// Anchors ordered by decreasing entropy; equal entropies keep
    /// row-major order.
    pub fn ranked_anchors(&self) -> Vec<Anchor> {
        let mut order: Vec<usize> = (0..self.values.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        order.into_iter().map(|i| self.anchor(i)).collect()
    }

    /// Debug dump: entropy scaled linearly so the map maximum becomes 255.
    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let max = self.values.iter().cloned().fold(0.0f64, f64::max);
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let pixels = self.values.iter().map(|v| (v * scale).round() as u8).collect();
        GrayImage::new(self.rows, self.cols, pixels)?.write_pgm(path)
    }
}

/// Entropy of a histogram over `total` samples, summed in bin order.
/// `table[f]` must hold `f * log2(f / total)`.
fn histogram_entropy(hist: &[u32; 256], table: &[f64], total: f64) -> f64 {
    let sum: f64 = hist.iter().filter(|&&f| f > 0).map(|&f| table[f as usize]).sum();
    let h = -sum / total;
    if h > 0.0 {
        h
    } else {
        0.0
    }
}

/// Entropy of an arbitrary set of 8-bit samples.
pub fn entropy(samples: &[u8]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let mut hist = [0u32; 256];
    for &s in samples {
        hist[s as usize] += 1;
    }
    let n = samples.len();
    let table = entropy_table(n);
    histogram_entropy(&hist, &table, n as f64)
}

fn entropy_table(n: usize) -> Vec<f64> {
    let total = n as f64;
    (0..=n)
        .map(|f| if f == 0 { 0.0 } else { f as f64 * (f as f64 / total).log2() })
        .collect()
}

/// Local entropy at every valid anchor, computed with a sliding histogram.
pub fn local_entropy_map(image: &GrayImage, side: usize) -> Result<EntropyMap> {
    image.check_patch_side(side)?;
    let out_rows = image.rows - side + 1;
    let out_cols = image.cols - side + 1;
    let n = side * side;
    let table = entropy_table(n);
    let total = n as f64;

    let values: Vec<f64> = (0..out_rows)
        .into_par_iter()
        .flat_map_iter(|r| {
            let mut hist = [0u32; 256];
            for dr in 0..side {
                for dc in 0..side {
                    hist[image.get(r + dr, dc) as usize] += 1;
                }
            }
            let mut row = Vec::with_capacity(out_cols);
            row.push(histogram_entropy(&hist, &table, total));
            for c in 1..out_cols {
                for dr in 0..side {
                    hist[image.get(r + dr, c - 1) as usize] -= 1;
                    hist[image.get(r + dr, c + side - 1) as usize] += 1;
                }
                row.push(histogram_entropy(&hist, &table, total));
            }
            row
        })
        .collect();

    Ok(EntropyMap {
        rows: out_rows,
        cols: out_cols,
        side,
        values,
    })
}

/// Column-stacked patch vectors together with their source anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchMatrix {
    side: usize,
    data: DMatrix<f64>,
    anchors: Vec<Anchor>,
}

impl PatchMatrix {
    /// Extracts the windows at `anchors` from `image`.
    pub fn extract(image: &GrayImage, side: usize, anchors: &[Anchor]) -> Result<Self> {
        image.check_patch_side(side)?;
        let n = side * side;
        let mut data = DMatrix::zeros(n, anchors.len());
        for (j, &a) in anchors.iter().enumerate() {
            if a.row + side > image.rows || a.col + side > image.cols {
                return Err(Error::param(
                    "anchor",
                    format!("({}, {}) places the window outside the image", a.row, a.col),
                ));
            }
            let mut col = data.column_mut(j);
            let mut i = 0;
            for c in 0..side {
                for r in 0..side {
                    col[i] = f64::from(image.get(a.row + r, a.col + c));
                    i += 1;
                }
            }
        }
        Ok(Self {
            side,
            data,
            anchors: anchors.to_vec(),
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Patch vector length.
    pub fn n(&self) -> usize {
        self.side * self.side
    }

    pub fn count(&self) -> usize {
        self.anchors.len()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }
}

/// Result of random training-patch sampling.
#[derive(Debug, Clone)]
pub struct TrainingPatches {
    pub patches: PatchMatrix,
    /// Number of patches asked for.
    pub requested: usize,
}

impl TrainingPatches {
    /// True when the image held fewer informative windows than requested.
    pub fn is_short(&self) -> bool {
        self.patches.count() < self.requested
    }
}

/// Population variance test done in exact integer arithmetic:
/// `var < 1  <=>  n * sum(x^2) - sum(x)^2 < n^2`.
fn is_homogeneous(image: &GrayImage, anchor: Anchor, side: usize) -> bool {
    let n = (side * side) as u64;
    let (mut s, mut s2) = (0u64, 0u64);
    for r in 0..side {
        let base = (anchor.row + r) * image.cols + anchor.col;
        for &p in &image.pixels[base..base + side] {
            let p = u64::from(p);
            s += p;
            s2 += p * p;
        }
    }
    debug_assert_eq!(HOMOGENEITY_THRESHOLD, 1.0);
    n * s2 - s * s < n * n
}

/// Draws up to `k` informative windows uniformly without replacement.
///
/// Homogeneous windows are skipped and sampling continues until `k` have
/// been accepted or every anchor has been examined.
pub fn extract_training_patches(
    image: &GrayImage,
    side: usize,
    k: usize,
    seed: u64,
) -> Result<TrainingPatches> {
    image.check_patch_side(side)?;
    if k == 0 {
        return Err(Error::param("k", "must be at least 1"));
    }
    let anchor_cols = image.cols - side + 1;
    let mut order: Vec<usize> = (0..image.anchor_count(side)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let anchors: Vec<Anchor> = order
        .into_iter()
        .map(|i| Anchor {
            row: i / anchor_cols,
            col: i % anchor_cols,
        })
        .filter(|&a| !is_homogeneous(image, a, side))
        .take(k)
        .collect();

    Ok(TrainingPatches {
        patches: PatchMatrix::extract(image, side, &anchors)?,
        requested: k,
    })
}

/// Number of salient patches for a given fraction of `total` anchors.
pub fn salient_count(total: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param("salient_fraction", format!("{fraction} is outside (0, 1]")));
    }
    Ok(((fraction * total as f64).round() as usize).clamp(1, total.max(1)))
}

/// Picks the highest-entropy windows of `reference` and extracts the same
/// windows from both images.
pub fn select_salient_patches(
    reference: &GrayImage,
    distorted: &GrayImage,
    side: usize,
    fraction: f64,
) -> Result<(PatchMatrix, PatchMatrix)> {
    reference.check_same_shape(distorted)?;
    let map = local_entropy_map(reference, side)?;
    let q = salient_count(map.values().len(), fraction)?;
    let mut anchors = map.ranked_anchors();
    anchors.truncate(q);
    Ok((
        PatchMatrix::extract(reference, side, &anchors)?,
        PatchMatrix::extract(distorted, side, &anchors)?,
    ))
}

pub(crate) fn ensure_same_shape(a: &GrayImage, b: &GrayImage) -> Result<()> {
    a.check_same_shape(b)
}
