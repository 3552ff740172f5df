//! Convergence-rate study with a mean-outcome function inside the RKHS.
//!
//! Each arm's mean outcome is a finite combination of Gaussian bumps with
//! the same bandwidth as the balancing kernel, so it has finite RKHS norm.
//! The study reports the RMSE of the balanced estimate at several sample
//! sizes and the slope of `log RMSE` against `log n`.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::evaluation::stream;
use super::example1::Example1Env;
use super::oracle::{optimal_policy, sape};
use super::sample_dataset;
use crate::balance::{BalanceConfig, BalanceProblem, ImbalanceScale, LambdaSpec, QpOptions};
use crate::data::{assignment_of, mean_outcome_matrix, propensity_matrix, TrueEnvironment};
use crate::error::{Error, Result};
use crate::estimators::{tau_weighted, weights_ipw};
use crate::kernels::KernelSpec;
use crate::Matrix;

/// Gaussian-mixture covariates with kernel-expansion mean outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteExpansionEnv {
    pub mixture: Example1Env,
    pub bandwidth: f64,
    pub centers: Vec<[f64; 2]>,
    /// `coef[t][j]` multiplies the bump at `centers[j]` for arm `t`.
    pub coef: Vec<Vec<f64>>,
}

impl FiniteExpansionEnv {
    pub fn random(m: usize, sigma: f64, bandwidth: f64, n_centers: usize, rng: &mut dyn RngCore) -> Self {
        let centers = (0..n_centers)
            .map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)])
            .collect();
        let coef = (0..m)
            .map(|_| (0..n_centers).map(|_| StandardNormal.sample(&mut *rng)).collect())
            .collect();
        Self {
            mixture: Example1Env::new(m, sigma),
            bandwidth,
            centers,
            coef,
        }
    }

    /// `sum_t gamma_t^{-2} ||mu_t||^2` with `gamma = 1`, i.e. `a_t^T K_c a_t`
    /// summed over arms.
    pub fn rkhs_norm_sq(&self) -> f64 {
        let s2 = self.bandwidth * self.bandwidth;
        let k = |a: &[f64; 2], b: &[f64; 2]| (-((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)) / s2).exp();
        self.coef
            .iter()
            .map(|a| {
                let mut s = 0.0;
                for (i, ci) in self.centers.iter().enumerate() {
                    for (j, cj) in self.centers.iter().enumerate() {
                        s += a[i] * a[j] * k(ci, cj);
                    }
                }
                s
            })
            .sum()
    }
}

impl TrueEnvironment for FiniteExpansionEnv {
    fn n_arms(&self) -> usize {
        self.coef.len()
    }

    fn dim(&self) -> usize {
        2
    }

    fn mean_outcomes(&self, x: &[f64]) -> Vec<f64> {
        let s2 = self.bandwidth * self.bandwidth;
        let bumps: Vec<f64> = self
            .centers
            .iter()
            .map(|c| (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / s2).exp())
            .collect();
        self.coef
            .iter()
            .map(|a| a.iter().zip(&bumps).map(|(u, v)| u * v).sum())
            .collect()
    }

    fn propensities(&self, x: &[f64]) -> Vec<f64> {
        self.mixture.propensities(x)
    }

    fn noise_sd(&self) -> f64 {
        self.mixture.sigma
    }

    fn sample_unit(&self, rng: &mut dyn RngCore) -> (Vec<f64>, usize) {
        self.mixture.sample_unit(rng)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateExperiment {
    pub grid: Vec<usize>,
    pub reps: usize,
    pub m: usize,
    pub sigma: f64,
    pub bandwidth: f64,
    pub n_centers: usize,
    pub qp: QpOptions,
}

impl Default for RateExperiment {
    fn default() -> Self {
        Self {
            grid: vec![50, 100, 200, 400],
            reps: 100,
            m: 3,
            sigma: 1.0,
            bandwidth: 1.0,
            n_centers: 8,
            qp: QpOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub grid: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub balanced_rmse: Vec<f64>,
    pub ipw_rmse: Vec<f64>,
    pub balanced_slope: f64,
    pub balanced_slope_se: f64,
    pub ipw_slope: f64,
    pub ipw_slope_se: f64,
}

/// Least-squares slope of `y` on `x` with its standard error.
pub fn ols_slope(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let se = if x.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (slope, se)
}

#[derive(Debug, Clone)]
pub struct RateHarness {
    pub cfg: RateExperiment,
    pub seed: u64,
    pub env: FiniteExpansionEnv,
    balance: BalanceConfig,
}

impl RateHarness {
    /// Draws the outcome function from stream 0 of `seed`.
    pub fn new(cfg: &RateExperiment, seed: u64) -> Result<Self> {
        if cfg.grid.len() < 2 || cfg.reps < 2 {
            return Err(Error::InvalidInput("rate study needs two sizes and two replications".into()));
        }
        let mut rng = stream(seed, 0);
        let env = FiniteExpansionEnv::random(cfg.m, cfg.sigma, cfg.bandwidth, cfg.n_centers, &mut rng);
        let balance = BalanceConfig {
            lambda: LambdaSpec::Scalar(cfg.sigma * cfg.sigma),
            imbalance: ImbalanceScale::Mean,
            ..BalanceConfig::default()
        }
        .with_kernel(KernelSpec::with_scale(cfg.bandwidth, Matrix::identity(2, 2)));
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            env,
            balance,
        })
    }

    /// Balanced and true-propensity IPW errors for one replication at grid
    /// point `g`.
    pub fn replicate(&self, g: usize, rep: usize) -> Result<(f64, f64)> {
        let n = self.cfg.grid[g];
        let mut rng = stream(self.seed, ((g as u64 + 1) << 32) | rep as u64);
        let ds = sample_dataset(&self.env, n, &mut rng);
        let p = assignment_of(&optimal_policy(&self.env), &ds.x)?;
        let truth = sape(&p, &mean_outcome_matrix(&self.env, &ds.x));
        let grams = self.balance.grams(&ds.x, ds.m)?;
        let w = BalanceProblem::new(&ds.t, &self.balance, &grams)?.solve(&p, &self.balance, &self.cfg.qp)?.w;
        let ipw = weights_ipw(&p, &ds.t, &propensity_matrix(&self.env, &ds.x))?;
        Ok((tau_weighted(&w, &ds.y) - truth, tau_weighted(&ipw, &ds.y) - truth))
    }

    /// `errors[g][rep]`.
    pub fn aggregate(&self, errors: &[Vec<(f64, f64)>]) -> RateReport {
        let rmse = |sel: fn(&(f64, f64)) -> f64| -> Vec<f64> {
            errors
                .iter()
                .map(|e| (e.iter().map(|v| sel(v).powi(2)).sum::<f64>() / e.len() as f64).sqrt())
                .collect()
        };
        let balanced_rmse = rmse(|v| v.0);
        let ipw_rmse = rmse(|v| v.1);
        let lx: Vec<f64> = self.cfg.grid.iter().map(|&n| (n as f64).ln()).collect();
        let ly = |v: &[f64]| v.iter().map(|r| r.ln()).collect::<Vec<_>>();
        let (balanced_slope, balanced_slope_se) = ols_slope(&lx, &ly(&balanced_rmse));
        let (ipw_slope, ipw_slope_se) = ols_slope(&lx, &ly(&ipw_rmse));
        RateReport {
            grid: self.cfg.grid.clone(),
            reps: self.cfg.reps,
            seed: self.seed,
            balanced_rmse,
            ipw_rmse,
            balanced_slope,
            balanced_slope_se,
            ipw_slope,
            ipw_slope_se,
        }
    }
}

/// Runs the study sequentially.
pub fn run_rate_experiment(cfg: &RateExperiment, seed: u64) -> Result<RateReport> {
    let h = RateHarness::new(cfg, seed)?;
    let mut errors = Vec::with_capacity(cfg.grid.len());
    for g in 0..cfg.grid.len() {
        errors.push((0..cfg.reps).map(|r| h.replicate(g, r)).collect::<Result<Vec<_>>>()?);
    }
    Ok(h.aggregate(&errors))
}
