#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparq_core::{Dictionary, GrayImage};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn random_dictionary(n: usize, m: usize, seed: u64) -> Dictionary {
    Dictionary::from_unnormalized(gaussian_matrix(n, m, &mut rng(seed))).unwrap()
}

pub fn max_coherence(dict: &Dictionary) -> f64 {
    let g = dict.atoms().transpose() * dict.atoms();
    let mut mu = 0.0f64;
    for i in 0..g.nrows() {
        for j in 0..i {
            mu = mu.max(g[(i, j)].abs());
        }
    }
    mu
}

/// Unit atoms drawn one by one, rejecting any whose |cosine| with an earlier
/// atom reaches `limit`.
pub fn incoherent_dictionary(n: usize, m: usize, limit: f64, rng: &mut ChaCha8Rng) -> Dictionary {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    while cols.len() < m {
        let v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v: Vec<f64> = v.iter().map(|x| x / norm).collect();
        if cols.iter().all(|c| c.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>().abs() < limit) {
            cols.push(v);
        }
    }
    Dictionary::new(DMatrix::from_fn(n, m, |r, c| cols[c][r])).unwrap()
}

/// Least-squares residual norm of `signal` on the atoms in `support`.
pub fn ls_residual(dict: &Dictionary, support: &[usize], signal: &[f64]) -> f64 {
    let a = DMatrix::from_fn(dict.n(), support.len(), |r, c| dict.atoms()[(r, support[c])]);
    let s = nalgebra::DVector::from_column_slice(signal);
    let x = a.clone().svd(true, true).solve(&s, 1e-14).unwrap();
    (s - a * x).norm()
}

/// Exhaustive search over all two-atom supports.
pub fn best_pair(dict: &Dictionary, signal: &[f64]) -> (Vec<usize>, f64) {
    let mut best = (vec![], f64::INFINITY);
    for i in 0..dict.m() {
        for j in i + 1..dict.m() {
            let r = ls_residual(dict, &[i, j], signal);
            if r < best.1 {
                best = (vec![i, j], r);
            }
        }
    }
    best
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Kendall tau-b by direct pair enumeration.
pub fn kendall_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut s, mut tx, mut ty) = (0.0f64, 0.0f64, 0.0f64);
    let mut pairs = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let a = sign(x[i] - x[j]);
            let b = sign(y[i] - y[j]);
            s += a * b;
            if a == 0.0 {
                tx += 1.0;
            }
            if b == 0.0 {
                ty += 1.0;
            }
            pairs += 1.0;
        }
    }
    s / ((pairs - tx) * (pairs - ty)).sqrt()
}

/// Mid-ranks by counting: rank = #smaller + (#equal + 1) / 2.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&a| {
            let less = v.iter().filter(|&&b| b < a).count() as f64;
            let equal = v.iter().filter(|&&b| b == a).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson_oracle(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> f64 {
    pearson_oracle(&midranks(x), &midranks(y))
}

/// Smooth gradients, stripes and a deterministic grain: textured enough
/// that every window carries structure.
pub fn synthetic_image(rows: usize, cols: usize, variant: u64) -> GrayImage {
    let mut r = rng(1000 + variant);
    let fx: f64 = r.gen_range(0.05..0.4);
    let fy: f64 = r.gen_range(0.05..0.4);
    let amp: f64 = r.gen_range(30.0..70.0);
    let noise: Vec<f64> = (0..rows * cols).map(|_| r.gen_range(-12.0..12.0)).collect();
    GrayImage::from_fn(rows, cols, |i, j| {
        let x = i as f64;
        let y = j as f64;
        let v = 128.0 + amp * (fx * x + 0.3 * (fy * y).sin()).sin() + 0.4 * amp * (fy * y).cos() + noise[i * cols + j];
        v.round().clamp(0.0, 255.0) as u8
    })
    .unwrap()
}
