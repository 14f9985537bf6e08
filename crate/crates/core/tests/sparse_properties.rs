mod common;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use proptest::prelude::*;
use sparq_core::linalg::{dot, norm};
use sparq_core::sparse::{batch_omp, omp, reconstruct};
use sparq_core::{Dictionary, SparseCode};

use common::{best_pair, incoherent_dictionary, random_dictionary, rng};

fn residual(dict: &Dictionary, code: &SparseCode, signal: &[f64]) -> Vec<f64> {
    let approx = reconstruct(dict, code).unwrap();
    signal.iter().zip(&approx).map(|(s, a)| s - a).collect()
}

fn signal_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn residual_is_orthogonal_to_selected_atoms(seed in 0u64..20, tau in 1usize..=12, signal in signal_strategy(16)) {
        let dict = random_dictionary(16, 32, seed);
        let code = omp(&dict, &signal, tau).unwrap();
        prop_assert!(code.nnz() <= tau);
        let r = residual(&dict, &code, &signal);
        for &i in code.support() {
            prop_assert!(dot(dict.atom(i), &r).abs() <= 1e-8 * norm(&signal).max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn batch_matches_sequential(seed in 0u64..20, tau in 1usize..=12, signal in signal_strategy(16)) {
        let dict = random_dictionary(16, 32, seed);
        let a = omp(&dict, &signal, tau).unwrap();
        let b = batch_omp(&dict, &DMatrix::from_column_slice(16, 1, &signal), tau).unwrap().remove(0);
        prop_assert_eq!(a.support(), b.support());
        let scale = norm(&signal).max(1.0);
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-8 * scale, "{} vs {}", x, y);
        }
    }

    #[test]
    fn scale_equivariance(seed in 0u64..20, tau in 1usize..=8, c in 0.01f64..100.0, signal in signal_strategy(16)) {
        let dict = random_dictionary(16, 32, seed);
        let base = omp(&dict, &signal, tau).unwrap();
        let scaled_signal: Vec<f64> = signal.iter().map(|v| c * v).collect();
        let scaled = omp(&dict, &scaled_signal, tau).unwrap();
        prop_assert_eq!(base.support(), scaled.support());
        for (x, y) in base.values().iter().zip(scaled.values()) {
            prop_assert!((c * x - y).abs() <= 1e-9 * (c * x).abs().max(1.0));
        }
    }

    #[test]
    fn residual_shrinks_with_each_atom(seed in 0u64..20, signal in signal_strategy(16)) {
        let dict = random_dictionary(16, 32, seed);
        let mut previous = norm(&signal);
        let mut previous_support: Vec<usize> = vec![];
        for tau in 1..=12 {
            let code = omp(&dict, &signal, tau).unwrap();
            // greedy: a larger budget extends the smaller one
            prop_assert!(previous_support.iter().all(|i| code.support().contains(i)));
            let r = norm(&residual(&dict, &code, &signal));
            prop_assert!(r <= previous * (1.0 + 1e-12) + 1e-12);
            previous = r;
            previous_support = code.support().to_vec();
        }
    }

    #[test]
    fn code_algebra_matches_dense(m in 2usize..30, raw in prop::collection::vec((0usize..30, -5.0f64..5.0), 0..10),
                                  raw2 in prop::collection::vec((0usize..30, -5.0f64..5.0), 0..10)) {
        let make = |raw: &[(usize, f64)]| {
            let mut dense = vec![0.0; m];
            for &(i, v) in raw {
                dense[i % m] = v;
            }
            let (support, values): (Vec<usize>, Vec<f64>) =
                dense.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).unzip();
            (SparseCode::new(m, support, values).unwrap(), dense)
        };
        let (a, da) = make(&raw);
        let (b, db) = make(&raw2);
        prop_assert_eq!(a.to_dense(), da.clone());
        let dense_dot: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
        let dense_dist: f64 = da.iter().zip(&db).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        prop_assert!((a.dot(&b) - dense_dot).abs() <= 1e-12 * (1.0 + dense_dot.abs()));
        prop_assert!((a.distance(&b) - dense_dist).abs() <= 1e-12 * (1.0 + dense_dist));
    }
}

#[test]
fn two_sparse_recovery_against_enumeration() {
    let mut r = rng(42);
    let mut exact = 0;
    for _ in 0..30 {
        use rand::Rng;
        let dict = incoherent_dictionary(8, 12, 0.5, &mut r);
        let i = r.gen_range(0..12);
        let j = (i + r.gen_range(1..12)) % 12;
        let mut signal = vec![0.0; 8];
        for (atom, c) in [(i, r.gen_range(0.5..2.0)), (j, -r.gen_range(0.5..2.0))] {
            for (s, a) in signal.iter_mut().zip(dict.atom(atom)) {
                *s += c * a;
            }
        }
        let (oracle, res) = best_pair(&dict, &signal);
        assert!(res < 1e-9);
        let mut truth = vec![i, j];
        truth.sort_unstable();
        assert_eq!(oracle, truth);
        let code = omp(&dict, &signal, 2).unwrap();
        if code.support() == truth.as_slice() {
            exact += 1;
            assert!(norm(&residual(&dict, &code, &signal)) < 1e-9);
        }
    }
    assert!(exact >= 27, "{exact}/30");
}

#[test]
fn orthonormal_basis_is_recovered_exactly() {
    let q = DMatrix::<f64>::identity(6, 6);
    let mut atoms = DMatrix::zeros(6, 7);
    atoms.columns_mut(0, 6).copy_from(&q);
    atoms[(0, 6)] = 1.0;
    atoms[(1, 6)] = 1.0;
    let dict = Dictionary::from_unnormalized(atoms).unwrap();
    let signal = [0.0, 0.0, 2.0, 0.0, -3.0, 0.0];
    let code = omp(&dict, &signal, 2).unwrap();
    assert_eq!(code.support(), &[2, 4]);
    assert_relative_eq!(code.values()[0], 2.0, epsilon = 1e-12);
    assert_relative_eq!(code.values()[1], -3.0, epsilon = 1e-12);
}
