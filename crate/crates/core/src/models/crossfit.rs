//! Out-of-fold outcome predictions.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::regression::{fit_with_kernel, RidgeOptions};
use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct CrossfitResult {
    /// n x m, row i predicted by a model that never saw row i.
    pub mu_hat: Matrix,
    /// Fold index of every row.
    pub folds: Vec<usize>,
    /// `(fold, arm)` pairs where the arm was absent from the training rows
    /// and the pooled training mean was used instead.
    pub fallbacks: Vec<(usize, usize)>,
}

/// Seeded partition of `0..n` into `k` folds of near-equal size.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut folds = alloc::vec![0; n];
    for (j, &i) in perm.iter().enumerate() {
        folds[i] = j * k / n;
    }
    folds
}

/// K-fold cross-fitted per-arm kernel ridge. A sample-scaled kernel is
/// resolved once on all covariates, which carry no outcome information.
pub fn crossfit(ds: &LoggedDataset, spec: &KernelSpec, opts: RidgeOptions, k: usize, seed: u64) -> Result<CrossfitResult> {
    let n = ds.n();
    if k < 2 || n < k {
        return Err(Error::InvalidInput(alloc::format!(
            "cross-fitting needs 2 <= folds <= n, got folds = {k}, n = {n}"
        )));
    }
    let kernel = spec.resolve(&ds.x)?;
    let folds = fold_assignment(n, k, seed);
    let mut mu_hat = Matrix::zeros(n, ds.m);
    let mut fallbacks = Vec::new();
    for f in 0..k {
        let train: Vec<usize> = (0..n).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..n).filter(|&i| folds[i] == f).collect();
        let train_ds = ds.subset(&train);
        let pooled = train_ds.y.iter().sum::<f64>() / train_ds.n() as f64;
        let (model, missing) = fit_with_kernel(&train_ds, &kernel, opts, Some(pooled))?;
        fallbacks.extend(missing.into_iter().map(|t| (f, t)));
        let pred = model.predict_matrix(&ds.subset(&test).x)?;
        for (r, &i) in test.iter().enumerate() {
            mu_hat.set_row(i, &pred.row(r));
        }
    }
    Ok(CrossfitResult {
        mu_hat,
        folds,
        fallbacks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn plain(ridge: f64) -> RidgeOptions {
        RidgeOptions { ridge, center: false }
    }

    fn small() -> LoggedDataset {
        let x = Matrix::from_row_slice(6, 1, &[0.0, 0.4, 1.0, 1.3, -0.5, 2.0]);
        LoggedDataset::new(x, vec![0, 1, 0, 1, 0, 1], vec![1.0, 2.0, 0.5, -1.0, 3.0, 0.2], 2)
    }

    #[test]
    fn folds_are_balanced_and_seeded() {
        let a = fold_assignment(23, 5, 9);
        assert_eq!(a, fold_assignment(23, 5, 9));
        for f in 0..5 {
            let c = a.iter().filter(|&&v| v == f).count();
            assert!(c == 4 || c == 5);
        }
    }

    #[test]
    fn leave_one_out_by_hand() {
        // One arm, three points, isotropic kernel with explicit scale.
        let x = Matrix::from_row_slice(3, 1, &[0.0, 1.0, 3.0]);
        let ds = LoggedDataset::new(x.clone(), vec![0; 3], vec![1.0, 2.0, 4.0], 1);
        let spec = KernelSpec::with_scale(1.0, Matrix::identity(1, 1));
        let ridge = 0.5;
        let res = crossfit(&ds, &spec, plain(ridge), 3, 1).unwrap();
        let k = |a: f64, b: f64| (-(a - b) * (a - b)).exp();
        let pts = [0.0, 1.0, 3.0];
        let ys = [1.0, 2.0, 4.0];
        for i in 0..3 {
            let o: Vec<usize> = (0..3).filter(|&j| j != i).collect();
            let (a, b) = (o[0], o[1]);
            // 2x2 ridge solve
            let (k11, k12, k22) = (1.0 + ridge, k(pts[a], pts[b]), 1.0 + ridge);
            let det = k11 * k22 - k12 * k12;
            let al = (k22 * ys[a] - k12 * ys[b]) / det;
            let be = (k11 * ys[b] - k12 * ys[a]) / det;
            let expect = al * k(pts[i], pts[a]) + be * k(pts[i], pts[b]);
            assert!((res.mu_hat[(i, 0)] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rows_do_not_see_their_own_outcome() {
        let ds = small();
        let spec = KernelSpec::default();
        let base = crossfit(&ds, &spec, plain(0.1), 3, 4).unwrap();
        for i in 0..ds.n() {
            let mut other = ds.clone();
            other.y[i] += 100.0;
            let res = crossfit(&other, &spec, plain(0.1), 3, 4).unwrap();
            assert_eq!(res.mu_hat.row(i), base.mu_hat.row(i));
        }
    }

    #[test]
    fn absent_arm_falls_back_to_pooled_mean() {
        let x = Matrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let ds = LoggedDataset::new(x, vec![0, 0, 0, 1], vec![1.0, 1.0, 1.0, 5.0], 2);
        let res = crossfit(&ds, &KernelSpec::default(), plain(1.0), 4, 0).unwrap();
        let f = res.folds[3];
        assert_eq!(res.fallbacks, vec![(f, 1)]);
        assert!((res.mu_hat[(3, 1)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn constant_outcomes_are_predicted_exactly() {
        let mut ds = small();
        ds.y.iter_mut().for_each(|y| *y = -0.5);
        let opts = RidgeOptions { ridge: 1.0, center: true };
        let res = crossfit(&ds, &KernelSpec::default(), opts, 3, 2).unwrap();
        assert!(res.mu_hat.iter().all(|&v| v == -0.5));
    }

    #[test]
    fn rejects_bad_fold_counts() {
        assert!(crossfit(&small(), &KernelSpec::default(), plain(1.0), 1, 0).is_err());
        assert!(crossfit(&small(), &KernelSpec::default(), plain(1.0), 7, 0).is_err());
    }
}
