//! Fixed-covariate replication study of policy evaluators.
//!
//! One covariate sample is drawn and kept. Each replication redraws
//! treatments and outcomes given those covariates, refits the nuisance
//! models and evaluates the optimal policy with every weighting scheme, in
//! vanilla and doubly robust form.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::example1::{Example1Env, Example1Spec};
use super::oracle::{optimal_policy, sape};
use super::{redraw_given_x, sample_dataset};
use crate::balance::{BalanceConfig, BalanceProblem, ImbalanceScale, QpOptions};
use crate::data::{assignment_of, mean_outcome_matrix, propensity_matrix, PolicyAssignment};
use crate::error::{Error, Result};
use crate::estimators::{support, tau_dr, tau_weighted, WeightScheme, DEFAULT_CLIP};
use crate::kernels::{ArmGrams, KernelSpec};
use crate::models::{crossfit, fit_gaussian_discriminant, CovarianceMode, RidgeOptions};
use crate::Matrix;

/// A row of the results table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMethod {
    /// Propensity weights from the true (`estimated = false`) or fitted
    /// propensities.
    Propensity { scheme: WeightScheme, estimated: bool },
    Balanced,
}

impl EvalMethod {
    pub fn label(&self) -> String {
        match self {
            EvalMethod::Propensity { scheme, estimated } => {
                let name = match scheme {
                    WeightScheme::Ipw => String::from("IPW"),
                    WeightScheme::Nipw => String::from("NIPW"),
                    WeightScheme::Cipw(c) => format!("{c}-CIPW"),
                    WeightScheme::Ncipw(c) => format!("{c}-NCIPW"),
                    WeightScheme::Balanced => String::from("Balanced"),
                };
                format!("{name}, {}", if *estimated { "phi_hat" } else { "phi" })
            }
            EvalMethod::Balanced => String::from("Balanced"),
        }
    }

    /// The nine rows of the standard table.
    pub fn standard(clip: f64) -> Vec<EvalMethod> {
        let mut out = Vec::new();
        for scheme in [WeightScheme::Ipw, WeightScheme::Cipw(clip), WeightScheme::Nipw, WeightScheme::Ncipw(clip)] {
            for estimated in [false, true] {
                out.push(EvalMethod::Propensity { scheme, estimated });
            }
        }
        out.push(EvalMethod::Balanced);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationBenchmark {
    pub spec: Example1Spec,
    pub reps: usize,
    pub methods: Vec<EvalMethod>,
    pub balance: BalanceConfig,
    pub qp: QpOptions,
    pub covariance: CovarianceMode,
    pub outcome_kernel: KernelSpec,
    pub outcome: RidgeOptions,
    pub folds: usize,
}

impl Default for EvaluationBenchmark {
    fn default() -> Self {
        Self {
            spec: Example1Spec::default(),
            reps: 200,
            methods: EvalMethod::standard(DEFAULT_CLIP),
            balance: BalanceConfig::default().with_imbalance(ImbalanceScale::Mean),
            qp: QpOptions::default(),
            covariance: CovarianceMode::PerArm,
            outcome_kernel: KernelSpec::default(),
            outcome: RidgeOptions::default(),
            folds: 5,
        }
    }
}

/// Errors and support of one method in one replication.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodSample {
    pub vanilla_error: f64,
    pub dr_error: f64,
    pub support: usize,
}

/// RMSE, bias and SD over replications; the SD uses the population
/// denominator so that `rmse^2 = bias^2 + sd^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub rmse: f64,
    pub bias: f64,
    pub sd: f64,
}

impl ErrorStats {
    pub fn from_errors(e: &[f64]) -> Self {
        let n = e.len() as f64;
        let bias = e.iter().sum::<f64>() / n;
        let var = e.iter().map(|v| (v - bias).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        Self {
            rmse: (bias * bias + var).sqrt(),
            bias,
            sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub label: String,
    pub vanilla: ErrorStats,
    pub dr: ErrorStats,
    pub support_mean: f64,
    pub support_sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationBenchReport {
    /// SAPE of the evaluated policy on the fixed covariates.
    pub truth: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub rows: Vec<MethodRow>,
}

/// Everything shared across replications.
#[derive(Debug, Clone)]
pub struct EvaluationHarness {
    pub cfg: EvaluationBenchmark,
    pub seed: u64,
    pub env: Example1Env,
    pub x: Matrix,
    pub phi: Matrix,
    pub target: PolicyAssignment,
    pub truth: f64,
    grams: ArmGrams,
}

impl EvaluationHarness {
    /// Draws the fixed covariates from stream 0 of `seed`.
    pub fn prepare(cfg: &EvaluationBenchmark, seed: u64) -> Result<Self> {
        if cfg.reps < 2 {
            return Err(Error::InvalidInput("at least two replications are needed".into()));
        }
        let env = Example1Env::new(cfg.spec.m, cfg.spec.sigma);
        let mut rng = stream(seed, 0);
        let x = sample_dataset(&env, cfg.spec.n, &mut rng).x;
        let target = assignment_of(&optimal_policy(&env), &x)?;
        let truth = sape(&target, &mean_outcome_matrix(&env, &x));
        cfg.balance.validate(cfg.spec.m, cfg.spec.n)?;
        let grams = cfg.balance.grams(&x, cfg.spec.m)?;
        Ok(Self {
            phi: propensity_matrix(&env, &x),
            cfg: cfg.clone(),
            seed,
            env,
            x,
            target,
            truth,
            grams,
        })
    }

    /// Replication `rep`, on its own stream of the master seed.
    pub fn replicate(&self, rep: usize) -> Result<Vec<MethodSample>> {
        let mut rng = stream(self.seed, rep as u64 + 1);
        let ds = redraw_given_x(&self.env, &self.x, &mut rng);
        let phi_hat = fit_gaussian_discriminant(&ds, self.cfg.covariance)?.predict_matrix(&self.x);
        let mu_hat = crossfit(&ds, &self.cfg.outcome_kernel, self.cfg.outcome, self.cfg.folds, rng.next_u64())?.mu_hat;
        let p = &self.target;
        let mut out = Vec::with_capacity(self.cfg.methods.len());
        for method in &self.cfg.methods {
            let w = match method {
                EvalMethod::Propensity { scheme, estimated } => {
                    let phi = if *estimated { &phi_hat } else { &self.phi };
                    scheme
                        .propensity_weights(p, &ds.t, phi)
                        .ok_or_else(|| Error::InvalidInput("balanced is not a propensity scheme".into()))??
                }
                EvalMethod::Balanced => {
                    let problem = BalanceProblem::new(&ds.t, &self.cfg.balance, &self.grams)?;
                    problem.solve(p, &self.cfg.balance, &self.cfg.qp)?.w
                }
            };
            out.push(MethodSample {
                vanilla_error: tau_weighted(&w, &ds.y) - self.truth,
                dr_error: tau_dr(&w, p, &mu_hat, &ds) - self.truth,
                support: support(&w),
            });
        }
        Ok(out)
    }

    /// Collapses per-replication samples into the results table.
    pub fn aggregate(&self, samples: &[Vec<MethodSample>]) -> EvaluationBenchReport {
        let rows = self
            .cfg
            .methods
            .iter()
            .enumerate()
            .map(|(k, method)| {
                let van: Vec<f64> = samples.iter().map(|s| s[k].vanilla_error).collect();
                let dr: Vec<f64> = samples.iter().map(|s| s[k].dr_error).collect();
                let sup: Vec<f64> = samples.iter().map(|s| s[k].support as f64).collect();
                let mean = sup.iter().sum::<f64>() / sup.len() as f64;
                let sd = (sup.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / sup.len() as f64).sqrt();
                MethodRow {
                    label: method.label(),
                    vanilla: ErrorStats::from_errors(&van),
                    dr: ErrorStats::from_errors(&dr),
                    support_mean: mean,
                    support_sd: sd,
                }
            })
            .collect();
        EvaluationBenchReport {
            truth: self.truth,
            n: self.x.nrows(),
            reps: samples.len(),
            seed: self.seed,
            rows,
        }
    }

    /// Row index of `method`, if it was requested.
    pub fn row_of(&self, method: EvalMethod) -> Option<usize> {
        self.cfg.methods.iter().position(|m| *m == method)
    }
}

/// Stream `index` of the ChaCha8 generator seeded with `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Runs every replication sequentially.
pub fn run_evaluation_benchmark(cfg: &EvaluationBenchmark, seed: u64) -> Result<EvaluationBenchReport> {
    let h = EvaluationHarness::prepare(cfg, seed)?;
    let samples = (0..cfg.reps).map(|r| h.replicate(r)).collect::<Result<Vec<_>>>()?;
    Ok(h.aggregate(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_stats_identity() {
        let e = [0.3, -0.1, 0.25, 0.9, -0.4];
        let s = ErrorStats::from_errors(&e);
        assert!((s.rmse * s.rmse - s.bias * s.bias - s.sd * s.sd).abs() < 1e-12);
        let direct = (e.iter().map(|v| v * v).sum::<f64>() / 5.0).sqrt();
        assert!((s.rmse - direct).abs() < 1e-12);
    }

    #[test]
    fn labels() {
        let rows = EvalMethod::standard(0.05);
        assert_eq!(rows.len(), 9);
        assert_eq!(rows[0].label(), "IPW, phi");
        assert_eq!(rows[3].label(), "0.05-CIPW, phi_hat");
        assert_eq!(rows[8].label(), "Balanced");
    }

    #[test]
    fn small_run_is_deterministic() {
        let cfg = EvaluationBenchmark {
            reps: 3,
            spec: Example1Spec { n: 40, ..Example1Spec::default() },
            ..EvaluationBenchmark::default()
        };
        let a = run_evaluation_benchmark(&cfg, 5).unwrap();
        let b = run_evaluation_benchmark(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 9);
    }
}
