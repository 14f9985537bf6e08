//! K-SVD dictionary learning.
//!
//! Each round codes every training signal against the current dictionary,
//! then sweeps the atoms in index order. Atom `i` is refit together with
//! its coefficient row as the best rank-one approximation of the residual
//! restricted to the signals that use it. The sweep keeps the residual
//! matrix `P - Phi X` up to date so each atom sees the effect of the ones
//! updated before it.
//!
//! A freshly coded signal only replaces its previous code when it
//! reconstructs at least as well, so the training error never increases
//! from one round to the next.

mod persist;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::PatchMatrix;
use crate::linalg::{axpy, dot, norm};
use crate::sparse::{BatchCoder, Dictionary, SparseCode};

pub use persist::{
    decode_dictionary, encode_dictionary, load_dictionary, save_dictionary, DictionaryHeader,
    FORMAT_VERSION, MAGIC,
};

/// Two candidate atoms closer than this in |cosine| count as duplicates.
const DUPLICATE_COSINE: f64 = 0.999;
const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_STEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnConfig {
    /// Number of atoms `m`.
    pub atoms: usize,
    /// Maximum nonzeros per code.
    pub sparsity: usize,
    pub iterations: usize,
    pub seed: u64,
    pub patch_side: usize,
    /// Stop early once the relative error improvement of a round falls
    /// below this value.
    pub min_improvement: Option<f64>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            atoms: 242,
            sparsity: 12,
            iterations: 30,
            seed: 0,
            patch_side: 11,
            min_improvement: None,
        }
    }
}

impl LearnConfig {
    fn validate_for(&self, n: usize, count: usize) -> Result<()> {
        if self.atoms <= n {
            return Err(Error::param(
                "atoms",
                format!("{} atoms is not overcomplete for dimension {n}", self.atoms),
            ));
        }
        if self.sparsity == 0 || self.sparsity >= self.atoms || self.sparsity > n {
            return Err(Error::param(
                "sparsity",
                format!("{} must lie in [1, min({n}, {}))", self.sparsity, self.atoms),
            ));
        }
        if self.iterations == 0 {
            return Err(Error::param("iterations", "must be at least 1"));
        }
        if count == 0 {
            return Err(Error::param("patches", "training set is empty"));
        }
        if self.atoms > count {
            return Err(Error::TooFewSignals {
                needed: self.atoms,
                found: count,
            });
        }
        Ok(())
    }
}

/// Per-round training diagnostics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    /// `|P - Phi X|_F / sqrt(n k)` after each round.
    pub errors: Vec<f64>,
    /// Unused atoms replaced during each round.
    pub replaced: Vec<usize>,
}

/// Picks up to `m` distinct, normalized signals in seeded random order.
fn draw_distinct(signals: &DMatrix<f64>, m: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut order: Vec<usize> = (0..signals.ncols()).collect();
    order.shuffle(rng);
    let mut chosen: Vec<Vec<f64>> = Vec::with_capacity(m);
    for j in order {
        if chosen.len() == m {
            break;
        }
        let col = signals.column(j);
        let len = col.norm();
        if !(len > 0.0) {
            continue;
        }
        let unit: Vec<f64> = col.iter().map(|v| v / len).collect();
        if chosen.iter().any(|c| dot(c, &unit).abs() > DUPLICATE_COSINE) {
            continue;
        }
        chosen.push(unit);
    }
    chosen
}

fn atoms_matrix(n: usize, columns: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_iterator(n, columns.len(), columns.iter().flatten().copied())
}

/// `m` distinct training signals chosen at random and normalized.
pub fn init_dictionary(signals: &DMatrix<f64>, m: usize, seed: u64) -> Result<Dictionary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen = draw_distinct(signals, m, &mut rng);
    if chosen.len() < m {
        return Err(Error::TooFewSignals {
            needed: m,
            found: chosen.len(),
        });
    }
    Dictionary::new(atoms_matrix(signals.nrows(), &chosen))
}

/// Like [`init_dictionary`], but pads with random unit vectors when the data
/// has fewer than `m` distinct directions.
fn init_or_pad(signals: &DMatrix<f64>, m: usize, seed: u64) -> Result<Dictionary> {
    let n = signals.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = draw_distinct(signals, m, &mut rng);
    if chosen.is_empty() {
        return Err(Error::param("patches", "every training signal is zero"));
    }
    while chosen.len() < m {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let len = norm(&v);
        chosen.push(v.into_iter().map(|x| x / len).collect());
    }
    Dictionary::new(atoms_matrix(n, &chosen))
}

/// Flips `u` so that its largest-magnitude entry is positive.
fn canonical_sign(u: &mut [f64]) {
    let mut best = 0usize;
    for (i, v) in u.iter().enumerate() {
        if v.abs() > u[best].abs() {
            best = i;
        }
    }
    if u[best] < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
}

/// Restricted residual `E` (column-major, `n x users`) for one atom.
struct RankOneProblem<'a> {
    n: usize,
    e: &'a [f64],
}

impl RankOneProblem<'_> {
    fn cols(&self) -> usize {
        self.e.len() / self.n
    }

    /// `E^T u`
    fn project(&self, u: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(self.e.chunks_exact(self.n)) {
            *o = dot(col, u);
        }
    }

    /// `E g`
    fn expand(&self, g: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for (&gj, col) in g.iter().zip(self.e.chunks_exact(self.n)) {
            axpy(gj, col, out);
        }
    }

    /// Leading left singular vector by power iteration on `E E^T`, started
    /// from `start`. The result never captures less energy than `start`.
    fn leading_vector(&self, start: &[f64]) -> Vec<f64> {
        let mut u = start.to_vec();
        let mut g = vec![0.0; self.cols()];
        let mut w = vec![0.0; self.n];
        self.project(&u, &mut g);
        let start_energy = dot(&g, &g);
        for _ in 0..POWER_MAX_STEPS {
            self.expand(&g, &mut w);
            let len = norm(&w);
            if !(len > 0.0) {
                break;
            }
            w.iter_mut().for_each(|v| *v /= len);
            let delta: f64 = w.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            std::mem::swap(&mut u, &mut w);
            self.project(&u, &mut g);
            if delta < POWER_TOLERANCE {
                break;
            }
        }
        if dot(&g, &g) < start_energy {
            return start.to_vec();
        }
        u
    }
}

struct Trainer<'a> {
    signals: &'a DMatrix<f64>,
    config: &'a LearnConfig,
    dict: Dictionary,
    codes: Vec<SparseCode>,
    residual: DMatrix<f64>,
}

impl Trainer<'_> {
    fn n(&self) -> usize {
        self.signals.nrows()
    }

    fn error(&self) -> f64 {
        let (n, k) = self.residual.shape();
        (dot(self.residual.as_slice(), self.residual.as_slice()) / (n * k) as f64).sqrt()
    }

    fn sparse_coding_step(&mut self, first: bool) -> Result<()> {
        let n = self.n();
        let coder = BatchCoder::new(&self.dict, self.config.sparsity)?;
        let fresh = coder.code_columns(self.signals)?;
        let dict = &self.dict;
        let signals = self.signals;
        self.codes
            .par_iter_mut()
            .zip(self.residual.as_mut_slice().par_chunks_mut(n))
            .zip(fresh.into_par_iter())
            .enumerate()
            .for_each(|(j, ((code, residual), candidate))| {
                let mut r = signals.column(j).iter().copied().collect::<Vec<f64>>();
                for (&i, &v) in candidate.support().iter().zip(candidate.values()) {
                    axpy(-v, dict.atom(i), &mut r);
                }
                if first || dot(&r, &r) <= dot(residual, residual) {
                    *code = candidate;
                    residual.copy_from_slice(&r);
                }
            });
        Ok(())
    }

    /// Users of each atom as `(signal index, position within its code)`.
    fn usage(&self) -> Vec<Vec<(usize, usize)>> {
        let mut users = vec![Vec::new(); self.dict.m()];
        for (j, code) in self.codes.iter().enumerate() {
            for (pos, &atom) in code.support().iter().enumerate() {
                users[atom].push((j, pos));
            }
        }
        users
    }

    /// Replaces an unused atom with the worst-represented training signal
    /// not already used for a replacement this round.
    fn replace_atom(&mut self, atom: usize, taken: &mut [bool]) {
        let n = self.n();
        let worst = self
            .residual
            .as_slice()
            .chunks_exact(n)
            .enumerate()
            .filter(|(j, _)| !taken[*j])
            .map(|(j, r)| (j, dot(r, r)))
            .fold(None, |best: Option<(usize, f64)>, (j, e)| match best {
                Some((_, b)) if e <= b => best,
                _ => Some((j, e)),
            });
        let Some((j, _)) = worst else { return };
        let col = self.signals.column(j);
        let len = col.norm();
        if !(len > 0.0) {
            return;
        }
        taken[j] = true;
        let mut u: Vec<f64> = col.iter().map(|v| v / len).collect();
        canonical_sign(&mut u);
        self.dict.atom_mut(atom).copy_from_slice(&u);
    }

    fn update_atom(&mut self, atom: usize, users: &[(usize, usize)]) {
        let n = self.n();
        let phi = self.dict.atom(atom).to_vec();
        let mut e = Vec::with_capacity(n * users.len());
        for &(j, pos) in users {
            let x = self.codes[j].values()[pos];
            let r = &self.residual.as_slice()[j * n..(j + 1) * n];
            e.extend(r.iter().zip(&phi).map(|(ri, pi)| ri + x * pi));
        }
        let problem = RankOneProblem { n, e: &e };
        let mut u = problem.leading_vector(&phi);
        canonical_sign(&mut u);
        let mut g = vec![0.0; users.len()];
        problem.project(&u, &mut g);

        self.dict.atom_mut(atom).copy_from_slice(&u);
        let residual = self.residual.as_mut_slice();
        for (k, &(j, pos)) in users.iter().enumerate() {
            self.codes[j].values_mut()[pos] = g[k];
            let r = &mut residual[j * n..(j + 1) * n];
            r.copy_from_slice(&e[k * n..(k + 1) * n]);
            axpy(-g[k], &u, r);
        }
    }

    fn dictionary_update_step(&mut self) -> usize {
        let users = self.usage();
        let mut taken = vec![false; self.signals.ncols()];
        let mut replaced = 0;
        for (atom, atom_users) in users.iter().enumerate() {
            if atom_users.is_empty() {
                self.replace_atom(atom, &mut taken);
                replaced += 1;
            } else {
                self.update_atom(atom, atom_users);
            }
        }
        replaced
    }
}

/// Learns a dictionary from the columns of `signals`.
pub fn learn_signals(signals: &DMatrix<f64>, config: &LearnConfig) -> Result<(Dictionary, TrainingReport)> {
    config.validate_for(signals.nrows(), signals.ncols())?;
    let dict = init_or_pad(signals, config.atoms, config.seed)?;
    let mut trainer = Trainer {
        signals,
        config,
        dict,
        codes: vec![SparseCode::empty(config.atoms); signals.ncols()],
        residual: signals.clone(),
    };
    let mut report = TrainingReport::default();

    for round in 0..config.iterations {
        trainer.sparse_coding_step(round == 0)?;
        report.replaced.push(trainer.dictionary_update_step());
        let err = trainer.error();
        let previous = report.errors.last().copied();
        report.errors.push(err);
        if let (Some(tol), Some(prev)) = (config.min_improvement, previous) {
            if prev <= 0.0 || (prev - err) / prev < tol {
                break;
            }
        }
    }

    let dict = Dictionary::from_normalized_unchecked(trainer.dict.into_atoms());
    dict.validate()?;
    Ok((dict, report))
}

/// Learns a dictionary from image patches.
pub fn learn(patches: &PatchMatrix, config: &LearnConfig) -> Result<(Dictionary, TrainingReport)> {
    if patches.side() != config.patch_side {
        return Err(Error::param(
            "patch_side",
            format!("config expects {}, patches have {}", config.patch_side, patches.side()),
        ));
    }
    learn_signals(patches.data(), config)
}
