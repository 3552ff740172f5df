//! Per-arm kernel ridge regression for `mu_hat`.

use alloc::vec::Vec;

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec};
use crate::{Matrix, Vector};

/// Fit for one arm.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmFit {
    /// `mu_hat(x) = offset + sum_j alpha_j k(x, X_j)` over the arm's
    /// training rows. `offset` is the arm mean when centering, else 0.
    KernelRidge { x: Matrix, alpha: Vector, offset: f64 },
    /// Constant prediction, used when an arm has no training rows.
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionModel {
    kernel: Kernel,
    arms: Vec<ArmFit>,
}

impl RegressionModel {
    pub fn m(&self) -> usize {
        self.arms.len()
    }

    pub fn arm(&self, t: usize) -> &ArmFit {
        &self.arms[t]
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    /// Predictions for every arm at the rows of `x`, n x m.
    pub fn predict_matrix(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = Matrix::zeros(x.nrows(), self.m());
        for (t, fit) in self.arms.iter().enumerate() {
            let col = match fit {
                ArmFit::KernelRidge { x: xt, alpha, offset } => {
                    (self.kernel.cross(x, xt)? * alpha).add_scalar(*offset)
                }
                ArmFit::Constant(c) => Vector::from_element(x.nrows(), *c),
            };
            out.set_column(t, &col);
        }
        Ok(out)
    }

    /// Predictions at a single point. Panics on a dimension mismatch.
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let row = Matrix::from_row_slice(1, x.len(), x);
        let p = self.predict_matrix(&row).expect("covariate dimension");
        p.row(0).iter().copied().collect()
    }
}

/// Solves `(K + ridge I) alpha = y`, by Cholesky or LU as a fallback.
fn ridge_solve(k: &Matrix, ridge: f64, y: &Vector) -> Result<Vector> {
    let mut a = k.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += ridge;
    }
    if let Some(ch) = nalgebra::Cholesky::new(a.clone()) {
        return Ok(ch.solve(y));
    }
    a.lu().solve(y).ok_or(Error::Singular("kernel ridge system"))
}

/// Ridge strength and whether to fit around each arm's mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RidgeOptions {
    pub ridge: f64,
    pub center: bool,
}

impl Default for RidgeOptions {
    fn default() -> Self {
        Self { ridge: 1.0, center: false }
    }
}

/// Fits each arm present in `ds` with `kernel`; arms without rows get
/// `fallback` if given, otherwise an error. Returns the absent arms too.
pub(crate) fn fit_with_kernel(
    ds: &LoggedDataset,
    kernel: &Kernel,
    opts: RidgeOptions,
    fallback: Option<f64>,
) -> Result<(RegressionModel, Vec<usize>)> {
    if !(opts.ridge >= 0.0) {
        return Err(Error::InvalidInput("ridge must be nonnegative".into()));
    }
    let mut arms = Vec::with_capacity(ds.m);
    let mut missing = Vec::new();
    for t in 0..ds.m {
        let rows = ds.arm_indices(t);
        if rows.is_empty() {
            missing.push(t);
            arms.push(ArmFit::Constant(fallback.unwrap_or(0.0)));
            continue;
        }
        let sub = ds.subset(&rows);
        let k = kernel.gram(&sub.x)?;
        let offset = if opts.center {
            sub.y.iter().sum::<f64>() / sub.n() as f64
        } else {
            0.0
        };
        let y = Vector::from_iterator(sub.n(), sub.y.iter().map(|v| v - offset));
        let alpha = ridge_solve(k.matrix(), opts.ridge, &y)?;
        arms.push(ArmFit::KernelRidge { x: sub.x, alpha, offset });
    }
    if fallback.is_none() && !missing.is_empty() {
        return Err(Error::MissingArms(missing));
    }
    Ok((
        RegressionModel {
            kernel: kernel.clone(),
            arms,
        },
        missing,
    ))
}

/// Kernel ridge per arm. A sample-scaled kernel is resolved on all of `ds.x`.
pub fn fit_kernel_ridge_per_arm(ds: &LoggedDataset, spec: &KernelSpec, opts: RidgeOptions) -> Result<RegressionModel> {
    let kernel = spec.resolve(&ds.x)?;
    Ok(fit_with_kernel(ds, &kernel, opts, None)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ridge(ridge: f64) -> RidgeOptions {
        RidgeOptions { ridge, center: false }
    }

    fn data(seed: u64) -> LoggedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 20;
        let x = Matrix::from_fn(n, 2, |_, _| rng.random_range(-2.0..2.0));
        let t = (0..n).map(|i| i % 2).collect();
        let y = (0..n).map(|i| x[(i, 0)].sin() + rng.random_range(-0.1..0.1)).collect();
        LoggedDataset::new(x, t, y, 2)
    }

    #[test]
    fn huge_ridge_shrinks_to_zero() {
        let ds = data(1);
        let model = fit_kernel_ridge_per_arm(&ds, &KernelSpec::default(), ridge(1e12)).unwrap();
        assert!(model.predict_matrix(&ds.x).unwrap().amax() < 1e-10);
    }

    #[test]
    fn single_point_reproduces_its_outcome() {
        let ds = LoggedDataset::new(Matrix::from_row_slice(1, 1, &[0.7]), vec![0], vec![2.5], 1);
        let model = fit_with_kernel(&ds, &Kernel::isotropic(1.0, 1), ridge(1e-12), None).unwrap().0;
        assert!((model.predict(&[0.7])[0] - 2.5).abs() < 1e-9);
    }

    #[test]
    fn tiny_ridge_interpolates() {
        let ds = data(2);
        let model = fit_kernel_ridge_per_arm(&ds, &KernelSpec::mahalanobis(0.5), ridge(1e-10)).unwrap();
        let fit = model.predict_matrix(&ds.x).unwrap();
        for i in 0..ds.n() {
            assert!((fit[(i, ds.t[i])] - ds.y[i]).abs() < 1e-4);
        }
    }

    #[test]
    fn predictions_are_linear_in_outcomes() {
        let a = data(3);
        let mut b = a.clone();
        b.y.iter_mut().enumerate().for_each(|(i, y)| *y = (i as f64).cos());
        let mut s = a.clone();
        for i in 0..s.n() {
            s.y[i] = a.y[i] + b.y[i];
        }
        let spec = KernelSpec::default();
        let f = |ds: &LoggedDataset| fit_kernel_ridge_per_arm(ds, &spec, ridge(0.3)).unwrap().predict_matrix(&a.x).unwrap();
        assert!((f(&a) + f(&b) - f(&s)).amax() < 1e-8);
    }

    #[test]
    fn centered_fit_of_constant_is_exact() {
        let mut ds = data(5);
        ds.y.iter_mut().for_each(|y| *y = 1.75);
        let opts = RidgeOptions { ridge: 1.0, center: true };
        let fit = fit_kernel_ridge_per_arm(&ds, &KernelSpec::default(), opts).unwrap();
        assert!(fit.predict_matrix(&ds.x).unwrap().iter().all(|&v| v == 1.75));
    }

    #[test]
    fn missing_arm_without_fallback_errors() {
        let mut ds = data(4);
        ds.m = 3;
        assert!(matches!(
            fit_kernel_ridge_per_arm(&ds, &KernelSpec::default(), ridge(1.0)),
            Err(Error::MissingArms(v)) if v == vec![2]
        ));
    }
}
