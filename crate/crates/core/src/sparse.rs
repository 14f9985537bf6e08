//! Sparse coding over a fixed overcomplete dictionary.
//!
//! Two coders are provided. [`omp`] keeps an explicit residual and
//! recomputes atom correlations each step. [`batch_omp`] precomputes the
//! Gram matrix once and tracks correlations and residual energy through it,
//! which is what makes coding thousands of patches against one dictionary
//! cheap. Both select the atom with the largest absolute correlation
//! (lowest index on ties), refit by least squares through a growing
//! Cholesky factor, and stop after `tau` atoms or once the residual norm
//! drops to `EARLY_EXIT * |signal|`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm, GrowingCholesky};

/// Relative residual norm at which coding stops before reaching `tau` atoms.
pub const EARLY_EXIT: f64 = 1e-6;

/// Allowed deviation from unit norm for dictionary atoms.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-9;

/// Overcomplete dictionary: an `n x m` matrix with unit-norm columns, `m > n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: DMatrix<f64>,
}

impl Dictionary {
    /// Wraps an atom matrix, checking every invariant.
    pub fn new(atoms: DMatrix<f64>) -> Result<Self> {
        let dict = Self { atoms };
        dict.validate()?;
        Ok(dict)
    }

    /// Normalizes every column to unit length first.
    pub fn from_unnormalized(mut atoms: DMatrix<f64>) -> Result<Self> {
        for (j, mut col) in atoms.column_iter_mut().enumerate() {
            let len = col.norm();
            if !(len > 0.0) || !len.is_finite() {
                return Err(Error::InvalidDictionary(format!("atom {j} is zero or non-finite")));
            }
            col /= len;
        }
        Self::new(atoms)
    }

    pub(crate) fn from_normalized_unchecked(atoms: DMatrix<f64>) -> Self {
        Self { atoms }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = self.atoms.shape();
        if n == 0 || m <= n {
            return Err(Error::InvalidDictionary(format!(
                "expected an overcomplete n x m matrix with m > n, got {n} x {m}"
            )));
        }
        for (j, col) in self.atoms.column_iter().enumerate() {
            let len = col.norm();
            if !len.is_finite() || col.iter().all(|&v| v == 0.0) {
                return Err(Error::InvalidDictionary(format!("atom {j} is zero or non-finite")));
            }
            if (len - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::InvalidDictionary(format!("atom {j} has norm {len}")));
            }
        }
        Ok(())
    }

    /// Signal dimension.
    pub fn n(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms.
    pub fn m(&self) -> usize {
        self.atoms.ncols()
    }

    pub fn atoms(&self) -> &DMatrix<f64> {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        let n = self.n();
        &self.atoms.as_slice()[i * n..(i + 1) * n]
    }

    pub(crate) fn atom_mut(&mut self, i: usize) -> &mut [f64] {
        let n = self.n();
        &mut self.atoms.as_mut_slice()[i * n..(i + 1) * n]
    }

    pub fn into_atoms(self) -> DMatrix<f64> {
        self.atoms
    }
}

/// Sparse coefficient vector: sorted support with aligned values.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCode {
    m: usize,
    support: Vec<usize>,
    values: Vec<f64>,
}

impl SparseCode {
    pub fn new(m: usize, support: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if support.len() != values.len() {
            return Err(Error::dims(support.len(), values.len()));
        }
        if let Some(&bad) = support.iter().find(|&&i| i >= m) {
            return Err(Error::param("support", format!("index {bad} out of range for {m} atoms")));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("support", "indices must be strictly increasing"));
        }
        Ok(Self { m, support, values })
    }

    pub fn empty(m: usize) -> Self {
        Self {
            m,
            support: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds a code from unordered `(atom, value)` pairs with distinct atoms.
    fn from_pairs(m: usize, mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_unstable_by_key(|p| p.0);
        let (support, values) = pairs.into_iter().unzip();
        Self { m, support, values }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn nnz(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn get(&self, atom: usize) -> f64 {
        match self.support.binary_search(&atom) {
            Ok(k) => self.values[k],
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.m];
        for (&i, &v) in self.support.iter().zip(&self.values) {
            out[i] = v;
        }
        out
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    /// Inner product over the support intersection.
    pub fn dot(&self, other: &SparseCode) -> f64 {
        let (mut a, mut b, mut acc) = (0, 0, 0.0);
        while a < self.support.len() && b < other.support.len() {
            match self.support[a].cmp(&other.support[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => {
                    acc += self.values[a] * other.values[b];
                    a += 1;
                    b += 1;
                }
            }
        }
        acc
    }

    /// Euclidean distance between the dense expansions.
    pub fn distance(&self, other: &SparseCode) -> f64 {
        self.merged_distance(other)
    }

    fn merged_distance(&self, other: &SparseCode) -> f64 {
        let (mut a, mut b, mut acc) = (0, 0, 0.0);
        loop {
            let d = match (self.support.get(a), other.support.get(b)) {
                (None, None) => break,
                (Some(_), None) => {
                    a += 1;
                    self.values[a - 1]
                }
                (None, Some(_)) => {
                    b += 1;
                    -other.values[b - 1]
                }
                (Some(i), Some(j)) => match i.cmp(j) {
                    std::cmp::Ordering::Less => {
                        a += 1;
                        self.values[a - 1]
                    }
                    std::cmp::Ordering::Greater => {
                        b += 1;
                        -other.values[b - 1]
                    }
                    std::cmp::Ordering::Equal => {
                        a += 1;
                        b += 1;
                        self.values[a - 1] - other.values[b - 1]
                    }
                },
            };
            acc += d * d;
        }
        acc.sqrt()
    }
}

fn check_tau(dict: &Dictionary, tau: usize) -> Result<()> {
    if tau == 0 {
        return Err(Error::param("tau", "sparsity must be at least 1"));
    }
    if tau > dict.n() {
        return Err(Error::param(
            "tau",
            format!("sparsity {tau} exceeds signal dimension {}", dict.n()),
        ));
    }
    Ok(())
}

/// Index of the largest `|values[j]|` over eligible `j`, lowest index on ties.
fn argmax_abs(values: &[f64], eligible: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, v) in values.iter().enumerate() {
        let a = v.abs();
        if !eligible(j) {
            continue;
        }
        match best {
            Some((_, b)) if a <= b => {}
            _ => best = Some((j, a)),
        }
    }
    best.filter(|&(_, a)| a > 0.0).map(|(j, _)| j)
}

/// Orthogonal matching pursuit with an explicit residual.
pub fn omp(dict: &Dictionary, signal: &[f64], tau: usize) -> Result<SparseCode> {
    check_tau(dict, tau)?;
    if signal.len() != dict.n() {
        return Err(Error::dims(dict.n(), signal.len()));
    }
    let m = dict.m();
    let signal_norm = norm(signal);
    let stop = EARLY_EXIT * signal_norm;

    let mut residual = signal.to_vec();
    let mut selected: Vec<usize> = Vec::with_capacity(tau);
    let mut rejected = vec![false; m];
    let mut chol = GrowingCholesky::new(tau);
    let mut coeffs: Vec<f64> = Vec::new();
    let mut corr = vec![0.0; m];

    while selected.len() < tau && norm(&residual) > stop {
        for (j, c) in corr.iter_mut().enumerate() {
            *c = dot(dict.atom(j), &residual);
        }
        let Some(k) = argmax_abs(&corr, |j| !rejected[j] && !selected.contains(&j)) else {
            break;
        };
        let atom = dict.atom(k);
        let cross: Vec<f64> = selected.iter().map(|&i| dot(dict.atom(i), atom)).collect();
        if !chol.try_push(&cross, dot(atom, atom)) {
            rejected[k] = true;
            continue;
        }
        selected.push(k);
        coeffs = selected.iter().map(|&i| dot(dict.atom(i), signal)).collect();
        chol.solve_in_place(&mut coeffs);
        residual.copy_from_slice(signal);
        for (&i, &x) in selected.iter().zip(&coeffs) {
            axpy(-x, dict.atom(i), &mut residual);
        }
    }

    Ok(SparseCode::from_pairs(m, selected.into_iter().zip(coeffs).collect()))
}

/// Gram-based coder for many signals sharing one dictionary.
#[derive(Debug, Clone)]
pub struct BatchCoder<'a> {
    dict: &'a Dictionary,
    gram: DMatrix<f64>,
    tau: usize,
}

impl<'a> BatchCoder<'a> {
    pub fn new(dict: &'a Dictionary, tau: usize) -> Result<Self> {
        check_tau(dict, tau)?;
        Ok(Self {
            dict,
            gram: dict.atoms().tr_mul(dict.atoms()),
            tau,
        })
    }

    pub fn dictionary(&self) -> &Dictionary {
        self.dict
    }

    /// Codes every column of `signals`.
    pub fn code_columns(&self, signals: &DMatrix<f64>) -> Result<Vec<SparseCode>> {
        if signals.nrows() != self.dict.n() {
            return Err(Error::dims(self.dict.n(), signals.nrows()));
        }
        let correlations = self.dict.atoms().tr_mul(signals);
        Ok((0..signals.ncols())
            .into_par_iter()
            .map(|j| {
                let energy = signals.column(j).norm_squared();
                self.code_from_correlations(correlations.column(j).as_slice(), energy)
            })
            .collect())
    }

    /// Codes one signal given `alpha0 = Phi^T signal` and `|signal|^2`.
    pub fn code_from_correlations(&self, alpha0: &[f64], energy: f64) -> SparseCode {
        let m = self.dict.m();
        let gram = self.gram.as_slice();
        let stop = EARLY_EXIT * EARLY_EXIT * energy;

        let mut alpha = alpha0.to_vec();
        let mut selected: Vec<usize> = Vec::with_capacity(self.tau);
        let mut rejected = vec![false; m];
        let mut chol = GrowingCholesky::new(self.tau);
        let mut coeffs: Vec<f64> = Vec::new();
        let mut residual_energy = energy;

        while selected.len() < self.tau && residual_energy > stop {
            let Some(k) = argmax_abs(&alpha, |j| !rejected[j] && !selected.contains(&j)) else {
                break;
            };
            let gram_k = &gram[k * m..(k + 1) * m];
            let cross: Vec<f64> = selected.iter().map(|&i| gram_k[i]).collect();
            if !chol.try_push(&cross, gram_k[k]) {
                rejected[k] = true;
                continue;
            }
            selected.push(k);
            coeffs = selected.iter().map(|&i| alpha0[i]).collect();
            chol.solve_in_place(&mut coeffs);

            alpha.copy_from_slice(alpha0);
            for (&i, &x) in selected.iter().zip(&coeffs) {
                axpy(-x, &gram[i * m..(i + 1) * m], &mut alpha);
            }
            let explained: f64 = selected.iter().zip(&coeffs).map(|(&i, &x)| x * alpha0[i]).sum();
            residual_energy = energy - explained;
        }

        SparseCode::from_pairs(m, selected.into_iter().zip(coeffs).collect())
    }
}

/// Codes every column of `signals` with a shared Gram matrix.
pub fn batch_omp(dict: &Dictionary, signals: &DMatrix<f64>, tau: usize) -> Result<Vec<SparseCode>> {
    BatchCoder::new(dict, tau)?.code_columns(signals)
}

/// Evaluates `Phi x`.
pub fn reconstruct(dict: &Dictionary, code: &SparseCode) -> Result<Vec<f64>> {
    if code.m() != dict.m() {
        return Err(Error::dims(dict.m(), code.m()));
    }
    let mut out = vec![0.0; dict.n()];
    for (&i, &v) in code.support().iter().zip(code.values()) {
        axpy(v, dict.atom(i), &mut out);
    }
    Ok(out)
}
