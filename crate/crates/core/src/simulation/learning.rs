//! Policy-learning study: fresh draws of the logged data, several learners
//! per draw, regret of each learned policy against the optimal one.

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::RngCore;

use super::evaluation::stream;
use super::example1::{Example1Env, Example1Spec};
use super::oracle::regret;
use super::sample_dataset;
use crate::balance::{BalanceConfig, ImbalanceScale, LambdaSpec};
use crate::data::{LoggedDataset, Policy};
use crate::error::{Error, Result};
use crate::kernels::KernelSpec;
use crate::learner::{
    learn_balanced, learn_balanced_dr, learn_dr_logit, learn_ipw_logit, DirectPolicy, LearnOutcome, LearnerConfig,
};
use crate::models::{crossfit, fit_gaussian_discriminant, fit_kernel_ridge_per_arm, CovarianceMode, RidgeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LearnerKind {
    Balanced,
    BalancedDr,
    IpwLogit,
    DrLogit,
    /// Argmin of the per-arm kernel ridge fit.
    Direct,
}

impl LearnerKind {
    pub fn label(&self) -> &'static str {
        match self {
            LearnerKind::Balanced => "balanced",
            LearnerKind::BalancedDr => "balanced-dr",
            LearnerKind::IpwLogit => "ipw-logit",
            LearnerKind::DrLogit => "dr-logit",
            LearnerKind::Direct => "direct",
        }
    }

    pub fn all() -> Vec<LearnerKind> {
        alloc::vec![
            LearnerKind::Balanced,
            LearnerKind::BalancedDr,
            LearnerKind::IpwLogit,
            LearnerKind::DrLogit,
            LearnerKind::Direct
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningBenchmark {
    pub spec: Example1Spec,
    pub draws: usize,
    pub learners: Vec<LearnerKind>,
    pub balance: BalanceConfig,
    pub learner: LearnerConfig,
    pub covariance: CovarianceMode,
    pub outcome_kernel: KernelSpec,
    pub outcome: RidgeOptions,
    pub folds: usize,
    /// Monte Carlo sample size of the regret oracle.
    pub regret_samples: usize,
}

impl Default for LearningBenchmark {
    fn default() -> Self {
        Self {
            spec: Example1Spec {
                sigma: 0.0,
                ..Example1Spec::default()
            },
            draws: 20,
            learners: LearnerKind::all(),
            balance: BalanceConfig {
                lambda: LambdaSpec::Scalar(0.0),
                imbalance: ImbalanceScale::Mean,
                ..BalanceConfig::default()
            },
            learner: LearnerConfig::default(),
            covariance: CovarianceMode::PerArm,
            outcome_kernel: KernelSpec::default(),
            outcome: RidgeOptions::default(),
            folds: 5,
            regret_samples: 100_000,
        }
    }
}

/// One learner on one draw.
#[derive(Debug, Clone, PartialEq)]
pub struct LearningSample {
    pub draw: usize,
    pub learner: LearnerKind,
    pub regret: f64,
    pub regret_se: f64,
    /// Final training objective; `None` for the direct method.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerSummary {
    pub label: String,
    pub mean_regret: f64,
    pub sd_regret: f64,
    pub regrets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearningBenchReport {
    pub draws: usize,
    pub seed: u64,
    pub summaries: Vec<LearnerSummary>,
    pub samples: Vec<LearningSample>,
}

impl LearningBenchReport {
    pub fn mean_regret(&self, kind: LearnerKind) -> Option<f64> {
        self.summaries.iter().find(|s| s.label == kind.label()).map(|s| s.mean_regret)
    }
}

#[derive(Debug, Clone)]
pub struct LearningHarness {
    pub cfg: LearningBenchmark,
    pub seed: u64,
    pub env: Example1Env,
}

/// A draw with its nuisance fits.
pub struct PreparedDraw {
    pub ds: LoggedDataset,
    pub phi_hat: crate::Matrix,
    pub mu_hat: crate::Matrix,
    pub learner_seed: u64,
    pub regret_seed: u64,
}

impl LearningHarness {
    pub fn new(cfg: &LearningBenchmark, seed: u64) -> Result<Self> {
        if cfg.draws == 0 {
            return Err(Error::InvalidInput("at least one draw is needed".into()));
        }
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            env: Example1Env::new(cfg.spec.m, cfg.spec.sigma),
        })
    }

    /// Dataset and nuisance fits of draw `draw`.
    pub fn prepare(&self, draw: usize) -> Result<PreparedDraw> {
        let mut rng = stream(self.seed, draw as u64);
        let ds = sample_dataset(&self.env, self.cfg.spec.n, &mut rng);
        let phi_hat = fit_gaussian_discriminant(&ds, self.cfg.covariance)?.predict_matrix(&ds.x);
        let mu_hat = crossfit(&ds, &self.cfg.outcome_kernel, self.cfg.outcome, self.cfg.folds, rng.next_u64())?.mu_hat;
        Ok(PreparedDraw {
            ds,
            phi_hat,
            mu_hat,
            learner_seed: rng.next_u64(),
            regret_seed: rng.next_u64(),
        })
    }

    /// Trains `kind` on a prepared draw and returns its regret.
    pub fn run(&self, draw: usize, prep: &PreparedDraw, kind: LearnerKind) -> Result<LearningSample> {
        let lcfg = LearnerConfig {
            seed: prep.learner_seed,
            ..self.cfg.learner.clone()
        };
        let ds = &prep.ds;
        let fitted = |out: LearnOutcome| -> (Box<dyn Policy>, Option<f64>) { (Box::new(out.policy), Some(out.objective)) };
        let (policy, objective) = match kind {
            LearnerKind::Balanced => fitted(learn_balanced(ds, &self.cfg.balance, &lcfg)?),
            LearnerKind::BalancedDr => fitted(learn_balanced_dr(ds, &self.cfg.balance, &lcfg, &prep.mu_hat)?),
            LearnerKind::IpwLogit => fitted(learn_ipw_logit(ds, &prep.phi_hat, &lcfg)?),
            LearnerKind::DrLogit => fitted(learn_dr_logit(ds, &prep.phi_hat, &prep.mu_hat, &lcfg)?),
            LearnerKind::Direct => {
                let model = fit_kernel_ridge_per_arm(ds, &self.cfg.outcome_kernel, self.cfg.outcome)?;
                (Box::new(DirectPolicy { model }) as Box<dyn Policy>, None)
            }
        };
        let r = regret(&policy, &self.env, self.cfg.regret_samples, prep.regret_seed);
        Ok(LearningSample {
            draw,
            learner: kind,
            regret: r.mean,
            regret_se: r.std_error,
            objective,
        })
    }

    /// All learners on draw `draw`.
    pub fn run_draw(&self, draw: usize) -> Result<Vec<LearningSample>> {
        let prep = self.prepare(draw)?;
        self.cfg.learners.iter().map(|&k| self.run(draw, &prep, k)).collect()
    }

    pub fn aggregate(&self, samples: Vec<LearningSample>) -> LearningBenchReport {
        let summaries = self
            .cfg
            .learners
            .iter()
            .map(|&k| {
                let regrets: Vec<f64> = samples.iter().filter(|s| s.learner == k).map(|s| s.regret).collect();
                let n = regrets.len() as f64;
                let mean = regrets.iter().sum::<f64>() / n;
                let sd = (regrets.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
                LearnerSummary {
                    label: String::from(k.label()),
                    mean_regret: mean,
                    sd_regret: sd,
                    regrets,
                }
            })
            .collect();
        LearningBenchReport {
            draws: self.cfg.draws,
            seed: self.seed,
            summaries,
            samples,
        }
    }
}

/// Runs every draw sequentially.
pub fn run_learning_benchmark(cfg: &LearningBenchmark, seed: u64) -> Result<LearningBenchReport> {
    let h = LearningHarness::new(cfg, seed)?;
    let mut samples = Vec::new();
    for d in 0..cfg.draws {
        samples.extend(h.run_draw(d)?);
    }
    Ok(h.aggregate(samples))
}
