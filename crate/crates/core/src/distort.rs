//! Synthetic degradations used for sanity experiments and benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imaging::GrayImage;

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Adds white Gaussian noise with standard deviation `sigma` (intensity
/// units), then rounds and clips to 8 bits.
pub fn add_gaussian_noise(image: &GrayImage, sigma: f64, seed: u64) -> Result<GrayImage> {
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::param("sigma", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = image
        .pixels()
        .iter()
        .map(|&p| clamp_u8(f64::from(p) + normal.sample(&mut rng)))
        .collect();
    GrayImage::new(image.rows(), image.cols(), pixels)
}

/// Normalized Gaussian taps truncated at three standard deviations.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::param("sigma", format!("{sigma} must be positive")));
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|x| (-(x * x) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    Ok(taps.into_iter().map(|t| t / total).collect())
}

fn reflect(i: i64, len: usize) -> usize {
    let len = len as i64;
    let period = 2 * len;
    let mut i = i.rem_euclid(period);
    if i >= len {
        i = period - 1 - i;
    }
    i as usize
}

/// Separable Gaussian blur with standard deviation `sigma`, mirrored edges.
pub fn gaussian_blur(image: &GrayImage, sigma: f64) -> Result<GrayImage> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as i64;
    let (rows, cols) = (image.rows(), image.cols());
    let mut horizontal = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            horizontal[r * cols + c] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * f64::from(image.get(r, reflect(c as i64 + k as i64 - radius, cols))))
                .sum();
        }
    }
    GrayImage::from_fn(rows, cols, |r, c| {
        clamp_u8(
            kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * horizontal[reflect(r as i64 + k as i64 - radius, rows) * cols + c])
                .sum(),
        )
    })
}
