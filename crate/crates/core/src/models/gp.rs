//! Gaussian-process marginal likelihood and grid tuning of the kernel
//! bandwidth, the per-arm scale `gamma` and the noise variance.

use alloc::vec::Vec;
use core::f64::consts::PI;

use num_traits::Float;

use crate::data::LoggedDataset;
use crate::error::{Error, Result};
use crate::kernels::{Kernel, KernelSpec};
use crate::{Matrix, Vector};

/// `log N(y; c 1, gamma^2 K + noise_var I)` with `c` set to its maximizer.
pub fn gp_log_marginal_likelihood(x: &Matrix, y: &[f64], kernel: &Kernel, gamma: f64, noise_var: f64) -> Result<f64> {
    if !(noise_var > 0.0) {
        return Err(Error::InvalidInput("noise variance must be positive".into()));
    }
    let n = y.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: x.nrows(),
        });
    }
    if n == 0 {
        return Ok(0.0);
    }
    let mut c = kernel.gram(x)?.matrix() * (gamma * gamma);
    for i in 0..n {
        c[(i, i)] += noise_var;
    }
    let chol = match nalgebra::Cholesky::new(c.clone()) {
        Some(ch) => ch,
        None => {
            let eps = 1e-10 * c.trace() / n as f64;
            for i in 0..n {
                c[(i, i)] += eps;
            }
            nalgebra::Cholesky::new(c).ok_or(Error::CholeskyFailed)?
        }
    };
    let yv = Vector::from_column_slice(y);
    let ones = Vector::from_element(n, 1.0);
    let ciy = chol.solve(&yv);
    let ci1 = chol.solve(&ones);
    let mean = ones.dot(&ciy) / ones.dot(&ci1);
    let quad = yv.dot(&ciy) - mean * ones.dot(&ciy);
    let half_log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
    Ok(-0.5 * quad - half_log_det - 0.5 * n as f64 * (2.0 * PI).ln())
}

/// Candidate values for each tuned hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub struct TuneGrid {
    pub bandwidths: Vec<f64>,
    pub gammas: Vec<f64>,
    pub noise_vars: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunePoint {
    pub bandwidth: f64,
    pub gamma: f64,
    pub noise_var: f64,
    /// Sum over arms of the profiled log marginal likelihood.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub best: TunePoint,
    /// Every grid point, in evaluation order.
    pub evaluated: Vec<TunePoint>,
}

/// Grid search maximizing the summed per-arm marginal likelihood. `base`
/// supplies the kernel scale; its bandwidth is overridden by the grid. Ties
/// go to the smallest bandwidth, then the smallest `gamma`, then the
/// smallest noise variance.
pub fn tune_hyperparameters(ds: &LoggedDataset, base: &KernelSpec, grid: &TuneGrid) -> Result<TuneResult> {
    if grid.bandwidths.is_empty() || grid.gammas.is_empty() || grid.noise_vars.is_empty() {
        return Err(Error::InvalidInput("tuning grid has an empty axis".into()));
    }
    let kernel = base.resolve(&ds.x)?;
    let arms: Vec<LoggedDataset> = (0..ds.m).map(|t| ds.subset(&ds.arm_indices(t))).collect();
    let mut evaluated = Vec::new();
    for &s in &grid.bandwidths {
        if !(s > 0.0) {
            return Err(Error::InvalidInput(alloc::format!("bandwidth must be positive, got {s}")));
        }
        let k = kernel.with_bandwidth(s);
        for &gamma in &grid.gammas {
            for &noise_var in &grid.noise_vars {
                let mut ll = 0.0;
                for a in &arms {
                    ll += gp_log_marginal_likelihood(&a.x, &a.y, &k, gamma, noise_var)?;
                }
                evaluated.push(TunePoint {
                    bandwidth: s,
                    gamma,
                    noise_var,
                    log_likelihood: ll,
                });
            }
        }
    }
    let best = *evaluated
        .iter()
        .min_by(|a, b| {
            b.log_likelihood
                .total_cmp(&a.log_likelihood)
                .then(a.bandwidth.total_cmp(&b.bandwidth))
                .then(a.gamma.total_cmp(&b.gamma))
                .then(a.noise_var.total_cmp(&b.noise_var))
        })
        .expect("grid is non-empty");
    Ok(TuneResult { best, evaluated })
}
