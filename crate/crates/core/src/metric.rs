//! The SPARQ index and its patch-level building blocks.
//!
//! Salient windows are chosen from the reference image's local entropy.
//! Each reference/distorted patch pair is sparse-coded over the reference
//! dictionary, and the two codes are compared by a direction term `alpha`
//! and a magnitude term `beta`. The index is the mean of `alpha * beta`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imaging::{self, downsample, downsample_factor, local_entropy_map, Anchor, GrayImage, PatchMatrix};
use crate::linalg::compensated_sum;
use crate::sparse::{omp, BatchCoder, Dictionary, SparseCode};

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SparqParams {
    /// Stabilizing constant in `alpha` and `beta`.
    pub c: f64,
    pub tau: usize,
    pub salient_fraction: f64,
    pub patch_side: usize,
}

impl Default for SparqParams {
    fn default() -> Self {
        Self {
            c: 0.01,
            tau: 12,
            salient_fraction: 0.15,
            patch_side: 11,
        }
    }
}

impl SparqParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::param("c", format!("{} must be positive", self.c)));
        }
        if !(self.salient_fraction > 0.0 && self.salient_fraction <= 1.0) {
            return Err(Error::param(
                "salient_fraction",
                format!("{} is outside (0, 1]", self.salient_fraction),
            ));
        }
        if self.patch_side == 0 {
            return Err(Error::param("patch_side", "must be positive"));
        }
        if self.tau == 0 {
            return Err(Error::param("tau", "must be at least 1"));
        }
        Ok(())
    }

    fn check_dictionary(&self, dict: &Dictionary) -> Result<()> {
        let n = self.patch_side * self.patch_side;
        if dict.n() != n {
            return Err(Error::dims(
                format!("dictionary for {0}x{0} patches (n = {n})", self.patch_side),
                format!("n = {}", dict.n()),
            ));
        }
        Ok(())
    }
}

fn check_codes(a: &SparseCode, b: &SparseCode) -> Result<()> {
    if a.m() != b.m() {
        return Err(Error::dims(a.m(), b.m()));
    }
    Ok(())
}

/// `(|xr . xd| + c) / (|xr| |xd| + c)`
pub fn alpha(xr: &SparseCode, xd: &SparseCode, c: f64) -> Result<f64> {
    check_codes(xr, xd)?;
    Ok((xr.dot(xd).abs() + c) / (xr.norm() * xd.norm() + c))
}

/// `1 - (|xr - xd| + c) / (|xr| + |xd| + c)`
pub fn beta(xr: &SparseCode, xd: &SparseCode, c: f64) -> Result<f64> {
    check_codes(xr, xd)?;
    Ok(1.0 - (xr.distance(xd) + c) / (xr.norm() + xd.norm() + c))
}

/// Similarity of one patch pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchScore {
    pub alpha: f64,
    pub beta: f64,
    pub score: f64,
    /// Both codes were empty, so `beta` collapsed to zero.
    pub degenerate: bool,
}

pub fn compare_codes(xr: &SparseCode, xd: &SparseCode, c: f64) -> Result<PatchScore> {
    let a = alpha(xr, xd, c)?;
    let b = beta(xr, xd, c)?;
    Ok(PatchScore {
        alpha: a,
        beta: b,
        score: a * b,
        degenerate: xr.is_empty() && xd.is_empty(),
    })
}

/// Codes both patches against `dict` and returns `alpha * beta`.
pub fn patch_quality(reference: &[f64], distorted: &[f64], dict: &Dictionary, params: &SparqParams) -> Result<f64> {
    params.validate()?;
    let xr = omp(dict, reference, params.tau)?;
    let xd = omp(dict, distorted, params.tau)?;
    Ok(compare_codes(&xr, &xd, params.c)?.score)
}

/// Per-image result with patch-level detail.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityResult {
    pub sparq: f64,
    /// Number of salient patches averaged.
    pub q: usize,
    pub downsample_factor: usize,
    /// Patches whose reference and distorted codes were both empty.
    pub degenerate: usize,
    pub anchors: Vec<Anchor>,
    pub scores: Vec<f64>,
}

/// Reference-side state reused across distorted images: the downsampled
/// reference, its entropy-ranked anchors and the codes of its salient
/// patches.
#[derive(Debug, Clone)]
pub struct PreparedReference<'d> {
    dict: &'d Dictionary,
    params: SparqParams,
    factor: usize,
    image: GrayImage,
    total_anchors: usize,
    anchors: Vec<Anchor>,
    codes: Vec<SparseCode>,
}

impl<'d> PreparedReference<'d> {
    /// Prepares the salient patches selected by `params.salient_fraction`.
    pub fn new(reference: &GrayImage, dict: &'d Dictionary, params: &SparqParams) -> Result<Self> {
        params.validate()?;
        params.check_dictionary(dict)?;
        let factor = downsample_factor(reference);
        let image = downsample(reference, factor)?;
        let map = local_entropy_map(&image, params.patch_side)?;
        let total_anchors = map.values().len();
        let q = imaging::salient_count(total_anchors, params.salient_fraction)?;
        let mut anchors = map.ranked_anchors();
        anchors.truncate(q);
        let patches = PatchMatrix::extract(&image, params.patch_side, &anchors)?;
        let codes = BatchCoder::new(dict, params.tau)?.code_columns(patches.data())?;
        Ok(Self {
            dict,
            params: *params,
            factor,
            image,
            total_anchors,
            anchors,
            codes,
        })
    }

    pub fn downsample_factor(&self) -> usize {
        self.factor
    }

    /// Number of valid windows in the downsampled reference.
    pub fn total_anchors(&self) -> usize {
        self.total_anchors
    }

    pub fn anchors(&self) -> &[Anchor] {
        &self.anchors
    }

    pub fn reference_codes(&self) -> &[SparseCode] {
        &self.codes
    }

    fn patch_scores(&self, distorted: &GrayImage) -> Result<Vec<PatchScore>> {
        let dis = downsample(distorted, self.factor)?;
        imaging::ensure_same_shape(&self.image, &dis)?;
        let patches = PatchMatrix::extract(&dis, self.params.patch_side, &self.anchors)?;
        let dis_codes = BatchCoder::new(self.dict, self.params.tau)?.code_columns(patches.data())?;
        self.codes
            .par_iter()
            .zip(dis_codes.par_iter())
            .map(|(xr, xd)| compare_codes(xr, xd, self.params.c))
            .collect()
    }

    /// SPARQ of `distorted` against the prepared reference.
    pub fn score(&self, distorted: &GrayImage) -> Result<QualityResult> {
        let scores = self.patch_scores(distorted)?;
        let q = scores.len();
        Ok(QualityResult {
            sparq: compensated_sum(scores.iter().map(|s| s.score)) / q as f64,
            q,
            downsample_factor: self.factor,
            degenerate: scores.iter().filter(|s| s.degenerate).count(),
            anchors: self.anchors.clone(),
            scores: scores.iter().map(|s| s.score).collect(),
        })
    }

    /// SPARQ at several salient fractions at once. Every fraction must not
    /// exceed the one the reference was prepared with; smaller selections
    /// are prefixes of the entropy ranking.
    pub fn score_fractions(&self, distorted: &GrayImage, fractions: &[f64]) -> Result<Vec<f64>> {
        let counts = fractions
            .iter()
            .map(|&f| {
                let q = imaging::salient_count(self.total_anchors, f)?;
                if q > self.anchors.len() {
                    return Err(Error::param(
                        "salient_fraction",
                        format!("{f} exceeds the prepared fraction {}", self.params.salient_fraction),
                    ));
                }
                Ok(q)
            })
            .collect::<Result<Vec<_>>>()?;
        let scores = self.patch_scores(distorted)?;
        Ok(counts
            .into_iter()
            .map(|q| compensated_sum(scores[..q].iter().map(|s| s.score)) / q as f64)
            .collect())
    }
}

/// SPARQ index of `distorted` with respect to `reference`.
pub fn sparq_index(
    reference: &GrayImage,
    distorted: &GrayImage,
    dict: &Dictionary,
    params: &SparqParams,
) -> Result<QualityResult> {
    imaging::ensure_same_shape(reference, distorted)?;
    PreparedReference::new(reference, dict, params)?.score(distorted)
}

/// Mean of the two directional indices, each using the dictionary learned
/// on its own first image.
pub fn sparq_symmetric(
    reference: &GrayImage,
    distorted: &GrayImage,
    dict_ref: &Dictionary,
    dict_dis: &Dictionary,
    params: &SparqParams,
) -> Result<f64> {
    let forward = sparq_index(reference, distorted, dict_ref, params)?.sparq;
    let backward = sparq_index(distorted, reference, dict_dis, params)?.sparq;
    Ok(0.5 * (forward + backward))
}

fn mse(reference: &GrayImage, distorted: &GrayImage) -> Result<f64> {
    imaging::ensure_same_shape(reference, distorted)?;
    let sum: u64 = reference
        .pixels()
        .iter()
        .zip(distorted.pixels())
        .map(|(&a, &b)| {
            let d = i64::from(a) - i64::from(b);
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / reference.pixels().len() as f64)
}

/// PSNR in dB; `+inf` for identical images.
pub fn psnr_db(reference: &GrayImage, distorted: &GrayImage) -> Result<f64> {
    let mse = mse(reference, distorted)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// PSNR capped at [`PSNR_CAP_DB`] so reports stay finite.
pub fn psnr(reference: &GrayImage, distorted: &GrayImage) -> Result<f64> {
    Ok(psnr_db(reference, distorted)?.min(PSNR_CAP_DB))
}
