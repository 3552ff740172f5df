//! Propensity models `phi_hat(x)`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::data::{rowwise, LoggedDataset};
use crate::error::{Error, Result};
use crate::kernels::{sample_covariance, COVARIANCE_RIDGE};
use crate::learner::bfgs::{self, BfgsOptions, Eval};
use crate::learner::policy::softmax_in_place;
use crate::{Matrix, Vector};

/// Lower bound applied to every predicted probability before renormalizing.
pub const PROPENSITY_FLOOR: f64 = 1e-12;

/// L2 penalty on the multinomial logit coefficients.
pub const LOGIT_PENALTY: f64 = 1e-4;

fn floor_and_normalize(p: &mut [f64]) {
    let mut sum = 0.0;
    for v in p.iter_mut() {
        *v = v.max(PROPENSITY_FLOOR);
        sum += *v;
    }
    p.iter_mut().for_each(|v| *v /= sum);
}

fn missing_arms(ds: &LoggedDataset) -> Result<()> {
    let missing: Vec<usize> = ds
        .arm_counts()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == 0)
        .map(|(t, _)| t)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingArms(missing))
    }
}

/// Multinomial logistic regression with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPropensity {
    /// m x (d + 1), intercept first.
    pub beta: Matrix,
}

impl LogitPropensity {
    pub fn predict_matrix(&self, x: &Matrix) -> Matrix {
        rowwise(x, self.beta.nrows(), |r| self.predict(r))
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let m = self.beta.nrows();
        let mut p = vec![0.0; m];
        for t in 0..m {
            p[t] = self.beta[(t, 0)] + x.iter().enumerate().map(|(k, v)| self.beta[(t, k + 1)] * v).sum::<f64>();
        }
        softmax_in_place(&mut p);
        floor_and_normalize(&mut p);
        p
    }
}

/// Penalized maximum-likelihood multinomial logit.
pub fn fit_multinomial_logit(ds: &LoggedDataset) -> Result<LogitPropensity> {
    missing_arms(ds)?;
    let (n, d, m) = (ds.n(), ds.d(), ds.m);
    let k = d + 1;
    if m == 1 {
        return Ok(LogitPropensity { beta: Matrix::zeros(1, k) });
    }
    let nll = |flat: &[f64]| {
        let mut value = 0.0;
        let mut grad = vec![0.0; m * k];
        let mut p = vec![0.0; m];
        for i in 0..n {
            for t in 0..m {
                let mut v = flat[t * k];
                for c in 0..d {
                    v += flat[t * k + c + 1] * ds.x[(i, c)];
                }
                p[t] = v;
            }
            let max = p.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + p.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            value -= p[ds.t[i]] - lse;
            for t in 0..m {
                let r = (p[t] - lse).exp() - if t == ds.t[i] { 1.0 } else { 0.0 };
                grad[t * k] += r;
                for c in 0..d {
                    grad[t * k + c + 1] += r * ds.x[(i, c)];
                }
            }
        }
        let inv = 1.0 / n as f64;
        value *= inv;
        for (g, b) in grad.iter_mut().zip(flat) {
            *g = *g * inv + 2.0 * LOGIT_PENALTY * b;
            value += LOGIT_PENALTY * b * b;
        }
        Eval { value, grad, aux: None }
    };
    let res = bfgs::minimize(nll, &vec![0.0; m * k], &BfgsOptions { grad_tol: 1e-6, max_iters: 1000 });
    if !res.value.is_finite() {
        return Err(Error::Singular("multinomial logit fit"));
    }
    Ok(LogitPropensity {
        beta: Matrix::from_row_slice(m, k, &res.x),
    })
}

/// How the discriminant estimates class covariances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceMode {
    #[default]
    PerArm,
    Shared,
}

/// Gaussian class-conditional model with Bayes-rule posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiscriminant {
    pub means: Vec<Vector>,
    /// Lower Cholesky factors of the class covariances.
    chols: Vec<Matrix>,
    log_dets: Vec<f64>,
    log_priors: Vec<f64>,
}

impl GaussianDiscriminant {
    pub fn predict_matrix(&self, x: &Matrix) -> Matrix {
        rowwise(x, self.means.len(), |r| self.predict(r))
    }

    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        let m = self.means.len();
        let mut logp = vec![0.0; m];
        for t in 0..m {
            let diff = Vector::from_iterator(x.len(), x.iter().zip(self.means[t].iter()).map(|(a, b)| a - b));
            let z = self.chols[t]
                .solve_lower_triangular(&diff)
                .unwrap_or_else(|| Vector::from_element(x.len(), f64::INFINITY));
            logp[t] = self.log_priors[t] - 0.5 * self.log_dets[t] - 0.5 * z.norm_squared();
        }
        softmax_in_place(&mut logp);
        floor_and_normalize(&mut logp);
        logp
    }
}

fn ridge(mut s: Matrix) -> Matrix {
    let d = s.nrows();
    let tr = s.trace();
    let eps = if tr > 0.0 { COVARIANCE_RIDGE * tr / d as f64 } else { COVARIANCE_RIDGE };
    for a in 0..d {
        s[(a, a)] += eps;
    }
    s
}

/// Fits per-arm Gaussians with frequency priors.
pub fn fit_gaussian_discriminant(ds: &LoggedDataset, mode: CovarianceMode) -> Result<GaussianDiscriminant> {
    missing_arms(ds)?;
    let (n, d, m) = (ds.n(), ds.d(), ds.m);
    let needed = (d + 1).max(2);
    let counts = ds.arm_counts();
    for (arm, &have) in counts.iter().enumerate() {
        if have < needed {
            return Err(Error::InsufficientArmData { arm, needed, have });
        }
    }
    let subsets: Vec<Matrix> = (0..m).map(|t| ds.subset(&ds.arm_indices(t)).x).collect();
    let means: Vec<Vector> = subsets.iter().map(|x| x.row_mean().transpose()).collect();
    let covs: Vec<Matrix> = match mode {
        CovarianceMode::PerArm => subsets.iter().map(sample_covariance).collect::<Result<_>>()?,
        CovarianceMode::Shared => {
            let mut pooled = Matrix::zeros(d, d);
            for (x, mu) in subsets.iter().zip(&means) {
                for i in 0..x.nrows() {
                    let c = x.row(i).transpose() - mu;
                    pooled += &c * c.transpose();
                }
            }
            let shared = ridge(pooled / (n - m) as f64);
            vec![shared; m]
        }
    };
    let mut chols = Vec::with_capacity(m);
    let mut log_dets = Vec::with_capacity(m);
    for s in covs {
        let l = nalgebra::Cholesky::new(s).ok_or(Error::CholeskyFailed)?.l();
        log_dets.push(2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>());
        chols.push(l);
    }
    let log_priors = counts.iter().map(|&c| (c as f64 / n as f64).ln()).collect();
    Ok(GaussianDiscriminant {
        means,
        chols,
        log_dets,
        log_priors,
    })
}

/// A fitted propensity model.
#[derive(Debug, Clone, PartialEq)]
pub enum PropensityModel {
    Logit(LogitPropensity),
    Gaussian(GaussianDiscriminant),
}

impl PropensityModel {
    pub fn predict(&self, x: &[f64]) -> Vec<f64> {
        match self {
            PropensityModel::Logit(l) => l.predict(x),
            PropensityModel::Gaussian(g) => g.predict(x),
        }
    }

    pub fn m(&self) -> usize {
        match self {
            PropensityModel::Logit(l) => l.beta.nrows(),
            PropensityModel::Gaussian(g) => g.means.len(),
        }
    }

    /// n x m matrix of predictions at the rows of `x`.
    pub fn predict_matrix(&self, x: &Matrix) -> Matrix {
        rowwise(x, self.m(), |r| self.predict(r))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn logit_recovers_frequencies_without_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 3000;
        let x = Matrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let t: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let ds = LoggedDataset::new(x, t, vec![0.0; n], 3);
        let model = fit_multinomial_logit(&ds).unwrap();
        for _ in 0..20 {
            let probe = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            for p in model.predict(&probe) {
                assert!((p - 1.0 / 3.0).abs() < 0.02, "{p}");
            }
        }
    }

    #[test]
    fn separable_logit_stays_interior() {
        let x = Matrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let ds = LoggedDataset::new(x, vec![0, 0, 0, 1, 1, 1], vec![0.0; 6], 2);
        let model = fit_multinomial_logit(&ds).unwrap();
        // The penalized optimum is no worse than beta = 0, whose mean NLL is
        // ln 2, so the penalty term alone is bounded by ln 2.
        let norm_sq: f64 = model.beta.iter().map(|b| b * b).sum();
        assert!(LOGIT_PENALTY * norm_sq <= 2f64.ln() + 1e-9, "{norm_sq}");
        let p = model.predict(&[3.0]);
        assert!(p[1] > 0.5 && p[1] < 1.0 && p[0] > 0.0, "{p:?}");
    }

    #[test]
    fn single_arm_is_constant() {
        let ds = LoggedDataset::new(Matrix::from_element(3, 1, 0.5), vec![0; 3], vec![0.0; 3], 1);
        assert_eq!(fit_multinomial_logit(&ds).unwrap().predict(&[7.0]), vec![1.0]);
    }

    #[test]
    fn missing_arm_is_reported() {
        let ds = LoggedDataset::new(Matrix::zeros(3, 1), vec![0, 0, 2], vec![0.0; 3], 4);
        match fit_multinomial_logit(&ds) {
            Err(Error::MissingArms(v)) => assert_eq!(v, vec![1, 3]),
            other => panic!("{other:?}"),
        }
    }

    fn two_blobs(center: f64, per: usize, seed: u64) -> LoggedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 2 * per;
        let t: Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = Matrix::from_fn(n, 1, |i, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if t[i] == 0 { -center } else { center }
        });
        LoggedDataset::new(x, t, vec![0.0; n], 2)
    }

    #[test]
    fn symmetric_discriminant_is_even_at_origin() {
        // Exactly symmetric sample: mirror each point.
        let base = two_blobs(1.0, 50, 1);
        let mut x = base.x.clone();
        for i in 0..x.nrows() {
            if base.t[i] == 1 {
                x[(i, 0)] = -base.x[(i - 1, 0)];
            }
        }
        let ds = LoggedDataset::new(x, base.t.clone(), base.y.clone(), 2);
        let g = fit_gaussian_discriminant(&ds, CovarianceMode::PerArm).unwrap();
        let p = g.predict(&[0.0]);
        assert!((p[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn separated_discriminant_is_confident() {
        let g = fit_gaussian_discriminant(&two_blobs(4.0, 100, 2), CovarianceMode::PerArm).unwrap();
        assert!(g.predict(&[-4.0])[0] > 0.9);
        let shared = fit_gaussian_discriminant(&two_blobs(4.0, 100, 2), CovarianceMode::Shared).unwrap();
        assert!(shared.predict(&[4.0])[1] > 0.9);
    }

    #[test]
    fn identical_classes_give_priors() {
        let x = Matrix::from_column_slice(6, 1, &[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0]);
        let ds = LoggedDataset::new(x, vec![0, 0, 0, 1, 1, 1], vec![0.0; 6], 2);
        let g = fit_gaussian_discriminant(&ds, CovarianceMode::PerArm).unwrap();
        for probe in [-5.0, 0.3, 2.0] {
            assert!((g.predict(&[probe])[0] - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn discriminant_needs_enough_rows() {
        let ds = LoggedDataset::new(Matrix::zeros(5, 2), vec![0, 0, 0, 1, 1], vec![0.0; 5], 2);
        assert!(matches!(
            fit_gaussian_discriminant(&ds, CovarianceMode::PerArm),
            Err(Error::InsufficientArmData { arm: 1, needed: 3, have: 2 })
        ));
    }

    #[test]
    fn floor_keeps_probabilities_positive() {
        let g = fit_gaussian_discriminant(&two_blobs(4.0, 100, 3), CovarianceMode::PerArm).unwrap();
        let p = g.predict(&[-60.0]);
        assert!(p.iter().all(|&v| v > 0.0));
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
