//! Agreement between objective scores and subjective ratings.
//!
//! Rank correlations (Spearman, Kendall tau-b) are computed on the raw
//! scores. Linear correlation, mean absolute error and RMS error are
//! computed after mapping the objective scores through a fitted
//! five-parameter logistic
//!
//! ```text
//! Q(s) = g1 * (1/2 - 1 / (1 + exp(g2 * (s - g3)))) + g4 * s + g5
//! ```

use argmin::core::{CostFunction, Executor, State, TerminationReason, TerminationStatus};
use argmin::solver::neldermead::NelderMead;
use serde::Serialize;

use crate::error::{Error, Result};

/// Nelder-Mead iteration budget per run.
pub const FIT_MAX_ITERS: u64 = 2000;
const FIT_RESTARTS: usize = 4;

/// Paired objective and subjective scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorePairs {
    objective: Vec<f64>,
    subjective: Vec<f64>,
}

impl ScorePairs {
    pub fn new(objective: Vec<f64>, subjective: Vec<f64>) -> Result<Self> {
        if objective.len() != subjective.len() {
            return Err(Error::dims(objective.len(), subjective.len()));
        }
        if objective.len() < 3 {
            return Err(Error::UndefinedCorrelation("at least 3 score pairs are required"));
        }
        if objective.iter().chain(&subjective).any(|v| !v.is_finite()) {
            return Err(Error::param("scores", "scores must be finite"));
        }
        Ok(Self { objective, subjective })
    }

    pub fn len(&self) -> usize {
        self.objective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objective.is_empty()
    }

    pub fn objective(&self) -> &[f64] {
        &self.objective
    }

    pub fn subjective(&self) -> &[f64] {
        &self.subjective
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Pearson linear correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::dims(x.len(), y.len()));
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Spearman rank-order correlation.
pub fn srocc(pairs: &ScorePairs) -> Result<f64> {
    pearson(&average_ranks(&pairs.objective), &average_ranks(&pairs.subjective))
        .map_err(|_| Error::UndefinedCorrelation("constant score list has no rank variance"))
}

fn tied_pairs(sorted: &[f64]) -> u64 {
    let mut total = 0u64;
    let mut run = 1u64;
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

/// Stable merge sort of `v` that returns the number of inversions
/// (pairs moved past a strictly smaller element).
fn sort_counting_swaps(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = sort_counting_swaps(&mut v[..mid], &mut buf[..mid]) + sort_counting_swaps(&mut v[mid..], &mut buf[mid..]);
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

/// Kendall tau-b, O(n log n).
pub fn krocc(pairs: &ScorePairs) -> Result<f64> {
    let n = pairs.len();
    let mut joined: Vec<(f64, f64)> = pairs.objective.iter().copied().zip(pairs.subjective.iter().copied()).collect();
    joined.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = (n as u64) * (n as u64 - 1) / 2;
    let xs: Vec<f64> = joined.iter().map(|p| p.0).collect();
    let x_ties = tied_pairs(&xs);
    let mut joint_ties = 0u64;
    let mut run = 1u64;
    for w in joined.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            joint_ties += run * (run - 1) / 2;
            run = 1;
        }
    }
    joint_ties += run * (run - 1) / 2;

    let mut ys: Vec<f64> = joined.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = sort_counting_swaps(&mut ys, &mut buf);
    let y_ties = tied_pairs(&ys);

    let denom_x = (n0 - x_ties) as f64;
    let denom_y = (n0 - y_ties) as f64;
    if denom_x == 0.0 || denom_y == 0.0 {
        return Err(Error::UndefinedCorrelation("all values tied"));
    }
    // concordant - discordant = n0 - x_ties - y_ties + joint_ties - 2 * swaps
    let numer = n0 as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    Ok((numer / (denom_x.sqrt() * denom_y.sqrt())).clamp(-1.0, 1.0))
}

/// `1/2 - 1/(1 + exp(sigma * s))`
pub fn logistic(sigma: f64, s: f64) -> f64 {
    0.5 - 1.0 / (1.0 + (sigma * s).exp())
}

/// Fitted five-parameter mapping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogisticFit {
    pub gamma: [f64; 5],
    pub converged: bool,
    /// RMS error of the mapping on the fitted data.
    pub rms: f64,
}

impl LogisticFit {
    pub fn apply(&self, s: f64) -> f64 {
        let [g1, g2, g3, g4, g5] = self.gamma;
        g1 * logistic(g2, s - g3) + g4 * s + g5
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn std_dev(v: &[f64], m: f64) -> f64 {
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64).sqrt()
}

/// Mean squared error of the mapping in standardized coordinates.
struct StandardizedFit<'a> {
    t: &'a [f64],
    y: &'a [f64],
}

fn mapping(p: &[f64], t: f64) -> f64 {
    p[0] * logistic(p[1], t - p[2]) + p[3] * t + p[4]
}

impl CostFunction for StandardizedFit<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let sse: f64 = self.t.iter().zip(self.y).map(|(&t, &y)| (mapping(p, t) - y).powi(2)).sum();
        let mse = sse / self.t.len() as f64;
        Ok(if mse.is_finite() { mse } else { f64::MAX })
    }
}

fn simplex_around(x0: &[f64]) -> Vec<Vec<f64>> {
    let mut simplex = vec![x0.to_vec()];
    for i in 0..x0.len() {
        let mut v = x0.to_vec();
        v[i] += if x0[i].abs() > 1e-3 { 0.25 * x0[i].abs().max(0.5) } else { 0.5 };
        simplex.push(v);
    }
    simplex
}

fn run_nelder_mead(problem: &StandardizedFit, x0: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
    let solver = NelderMead::new(simplex_around(x0))
        .with_sd_tolerance(1e-14)
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let res = Executor::new(StandardizedFit { t: problem.t, y: problem.y }, solver)
        .configure(|state| state.max_iters(FIT_MAX_ITERS))
        .run()
        .map_err(|e| Error::Optimizer(e.to_string()))?;
    let state = res.state();
    let converged = matches!(
        state.get_termination_status(),
        TerminationStatus::Terminated(TerminationReason::SolverConverged)
    );
    let best = state.get_best_param().cloned().unwrap_or_else(|| x0.to_vec());
    Ok((best, state.get_best_cost(), converged))
}

/// Fits the five-parameter logistic by minimizing RMS error.
///
/// Scores are standardized before fitting. Nelder-Mead is started from the
/// logistic initialization `(range(y), 1, median(s), 0, mean(y))`, from its
/// mirror image and from the least-squares line (`g1 = 0`), then restarted
/// from the best point; the best result wins, so the fit is never worse than
/// the affine regression.
pub fn fit_logistic(pairs: &ScorePairs) -> Result<LogisticFit> {
    if pairs.len() < 5 {
        return Err(Error::param("pairs", "at least 5 pairs are needed to fit 5 parameters"));
    }
    let (obj, subj) = (&pairs.objective, &pairs.subjective);
    let (ms, my) = (mean(obj), mean(subj));
    let ss = std_dev(obj, ms);
    if ss == 0.0 {
        return Err(Error::param("objective", "objective scores are all equal"));
    }
    let sy = match std_dev(subj, my) {
        s if s > 0.0 => s,
        _ => 1.0,
    };
    let t: Vec<f64> = obj.iter().map(|s| (s - ms) / ss).collect();
    let y: Vec<f64> = subj.iter().map(|v| (v - my) / sy).collect();
    let problem = StandardizedFit { t: &t, y: &y };

    let range = y.iter().cloned().fold(f64::MIN, f64::max) - y.iter().cloned().fold(f64::MAX, f64::min);
    let slope = t.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / t.len() as f64;
    let mid = median(&t);
    let starts = [
        vec![range, 1.0, mid, 0.0, mean(&y)],
        vec![-range, 1.0, mid, 0.0, mean(&y)],
        vec![0.0, 1.0, mid, slope, 0.0],
    ];

    let affine = starts[2].clone();
    let affine_cost = problem.cost(&affine).map_err(|e| Error::Optimizer(e.to_string()))?;
    let mut best = (affine, affine_cost, false);
    for x0 in &starts {
        let candidate = run_nelder_mead(&problem, x0)?;
        if candidate.1 < best.1 {
            best = candidate;
        }
    }
    for _ in 0..FIT_RESTARTS {
        let candidate = run_nelder_mead(&problem, &best.0)?;
        let improved = candidate.1 < best.1 * (1.0 - 1e-9);
        if candidate.1 <= best.1 {
            best = candidate;
        }
        if !improved {
            break;
        }
    }

    let p = &best.0;
    let g4 = sy * p[3] / ss;
    let gamma = [sy * p[0], p[1] / ss, ms + ss * p[2], g4, my + sy * p[4] - g4 * ms];
    let mut fit = LogisticFit {
        gamma,
        converged: best.2,
        rms: 0.0,
    };
    fit.rms = rms_error(obj.iter().map(|&s| fit.apply(s)), subj);
    if !fit.rms.is_finite() {
        return Err(Error::Optimizer("fitted mapping is not finite".into()));
    }
    Ok(fit)
}

fn rms_error(predicted: impl Iterator<Item = f64>, target: &[f64]) -> f64 {
    (predicted.zip(target).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / target.len() as f64).sqrt()
}

/// Least-squares line `y = a s + b`, returned with its RMS error.
pub fn affine_fit(pairs: &ScorePairs) -> (f64, f64, f64) {
    let (mx, my) = (mean(&pairs.objective), mean(&pairs.subjective));
    let sxx: f64 = pairs.objective.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = pairs.objective.iter().zip(&pairs.subjective).map(|(x, y)| (x - mx) * (y - my)).sum();
    let a = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let b = my - a * mx;
    let rms = rms_error(pairs.objective.iter().map(|x| a * x + b), &pairs.subjective);
    (a, b, rms)
}

/// Full set of agreement statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalStats {
    pub srocc: f64,
    pub krocc: f64,
    pub cc: f64,
    pub mae: f64,
    pub rms: f64,
    pub fit: LogisticFit,
}

pub fn evaluate(pairs: &ScorePairs) -> Result<EvalStats> {
    let srocc = srocc(pairs)?;
    let krocc = krocc(pairs)?;
    let fit = fit_logistic(pairs)?;
    let mapped: Vec<f64> = pairs.objective.iter().map(|&s| fit.apply(s)).collect();
    let cc = pearson(&mapped, &pairs.subjective)?;
    let mae = mapped.iter().zip(&pairs.subjective).map(|(p, t)| (p - t).abs()).sum::<f64>() / pairs.len() as f64;
    let rms = rms_error(mapped.iter().copied(), &pairs.subjective);
    Ok(EvalStats {
        srocc,
        krocc,
        cc,
        mae,
        rms,
        fit,
    })
}
