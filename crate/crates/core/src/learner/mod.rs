//! Policy learning over the softmax-linear class.
//!
//! The balanced learners minimize the balanced estimate (vanilla or doubly
//! robust) of a policy plus an optional multiple of `E`, where the weights are
//! themselves the minimizer of the balance QP for that policy. Gradients come
//! from implicit differentiation of the QP, chained through the softmax.
//! The IPW and DR logit learners are the usual plug-in baselines.

pub mod bfgs;
pub mod gradients;
pub mod policy;

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use bfgs::{BfgsOptions, BfgsResult, Eval, TraceStep};
pub use gradients::{implicit_gradients, AssignmentGradients, ImplicitGradient};
pub use policy::{chain_to_beta, softmax_assignment, LogitPolicy};

use crate::balance::{BalanceConfig, BalanceProblem, QpOptions, WeightsSolution};
use crate::data::{validate_dataset, LoggedDataset, Policy, PolicyAssignment, Violation};
use crate::error::{Error, Result};
use crate::estimators::{residuals, tau_direct, tau_weighted};
use crate::models::RegressionModel;
use crate::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    /// Weight on `E` in the outer objective.
    pub lambda_reg: f64,
    pub restarts: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    /// Standard deviation of the Gaussian initial parameters.
    pub init_scale: f64,
    /// Inner QP tolerance.
    pub qp_tol: f64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            lambda_reg: 0.0,
            restarts: 10,
            grad_tol: 1e-6,
            max_iters: 200,
            seed: 0,
            init_scale: 1.0,
            qp_tol: 1e-7,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidInput("restarts must be at least 1".into()));
        }
        if !(self.lambda_reg >= 0.0) {
            return Err(Error::InvalidInput("lambda_reg must be nonnegative".into()));
        }
        Ok(())
    }

    fn bfgs(&self) -> BfgsOptions {
        BfgsOptions {
            grad_tol: self.grad_tol,
            max_iters: self.max_iters,
        }
    }
}

/// Anything the restart driver can minimize over flat logit parameters.
pub trait PolicyObjective {
    fn eval(&mut self, beta: &[f64]) -> Eval;
}

/// Dataset checks for learning; a single arm is allowed here.
fn check_dataset(ds: &LoggedDataset) -> Result<()> {
    match validate_dataset(ds) {
        Ok(()) => Ok(()),
        Err(v) => match v.iter().find(|v| !matches!(v, Violation::TooFewArms { .. })) {
            Some(first) => Err(Error::InvalidInput(alloc::format!("{first}"))),
            None if ds.m >= 1 => Ok(()),
            None => Err(Error::InvalidInput("no treatments".into())),
        },
    }
}

/// Bilevel objective `tau_{W*(pi)} + lambda E(W*(pi), pi)`, optionally
/// doubly robust.
#[derive(Debug, Clone)]
pub struct BalancedObjective {
    x: Matrix,
    m: usize,
    cfg: BalanceConfig,
    problem: BalanceProblem,
    workspace: ImplicitGradient,
    /// `Y` or `Y - mu_hat[T]`.
    residual: Vec<f64>,
    mu_hat: Option<Matrix>,
    lambda_reg: f64,
    qp: QpOptions,
    warm: Option<Vec<f64>>,
    last: Option<WeightsSolution>,
}

impl BalancedObjective {
    pub fn new(
        ds: &LoggedDataset,
        cfg: &BalanceConfig,
        lambda_reg: f64,
        mu_hat: Option<&Matrix>,
        qp_tol: f64,
    ) -> Result<Self> {
        check_dataset(ds)?;
        let grams = cfg.grams(&ds.x, ds.m)?;
        let problem = BalanceProblem::new(&ds.t, cfg, &grams)?;
        let workspace = ImplicitGradient::new(&problem)?;
        let residual = match mu_hat {
            Some(mu) => {
                if mu.nrows() != ds.n() || mu.ncols() != ds.m {
                    return Err(Error::DimensionMismatch {
                        expected: ds.n(),
                        got: mu.nrows(),
                    });
                }
                residuals(ds, mu)
            }
            None => ds.y.clone(),
        };
        Ok(Self {
            x: ds.x.clone(),
            m: ds.m,
            cfg: cfg.clone(),
            problem,
            workspace,
            residual,
            mu_hat: mu_hat.cloned(),
            lambda_reg,
            qp: QpOptions {
                tol: qp_tol,
                ..QpOptions::default()
            },
            warm: None,
            last: None,
        })
    }

    pub fn problem(&self) -> &BalanceProblem {
        &self.problem
    }

    /// Weights solved at the most recent evaluation.
    pub fn last_solution(&self) -> Option<&WeightsSolution> {
        self.last.as_ref()
    }

    /// Forgets the warm start.
    pub fn reset(&mut self) {
        self.warm = None;
        self.last = None;
    }

    /// Objective value, solution and assignment-space gradients at `beta`.
    pub fn evaluate(&mut self, beta: &Matrix) -> Result<(f64, WeightsSolution, AssignmentGradients, PolicyAssignment)> {
        let p = softmax_assignment(beta, &self.x)?;
        let mut opts = self.qp.clone();
        opts.warm_start = self.warm.clone();
        let sol = self.problem.solve(&p, &self.cfg, &opts)?;
        let mut value = tau_weighted(&sol.w, &self.residual);
        if let Some(mu) = &self.mu_hat {
            value += tau_direct(&p, mu);
        }
        if self.lambda_reg > 0.0 {
            value += self.lambda_reg * sol.objective.max(0.0).sqrt();
        }
        let grads = implicit_gradients(
            &sol,
            &self.residual,
            &p,
            &self.problem,
            &self.workspace,
            self.mu_hat.as_ref(),
        )?;
        self.warm = Some(sol.w.clone());
        self.last = Some(sol.clone());
        Ok((value, sol, grads, p))
    }

    /// Gradient of the objective with respect to `P`.
    pub fn assignment_gradient(&self, grads: &AssignmentGradients) -> Matrix {
        if self.lambda_reg > 0.0 {
            &grads.d_tau + &grads.d_reg * self.lambda_reg
        } else {
            grads.d_tau.clone()
        }
    }
}

impl PolicyObjective for BalancedObjective {
    fn eval(&mut self, flat: &[f64]) -> Eval {
        let beta = Matrix::from_row_slice(self.m, self.x.ncols() + 1, flat);
        match self.evaluate(&beta) {
            Ok((value, sol, grads, p)) => {
                let gp = self.assignment_gradient(&grads);
                let gb = chain_to_beta(&gp, &p, &self.x);
                Eval {
                    value,
                    grad: flatten(&gb),
                    aux: Some(sol.support()),
                }
            }
            Err(_) => Eval::failed(flat.len()),
        }
    }
}

/// Plug-in objectives linear in `P[i][T_i]`: IPW, or DR when `mu_hat` is set.
#[derive(Debug, Clone)]
pub struct PlugInObjective {
    x: Matrix,
    m: usize,
    treatments: Vec<usize>,
    /// `r_i / (n phi_hat[i][T_i])`.
    coef: Vec<f64>,
    mu_hat: Option<Matrix>,
}

impl PlugInObjective {
    pub fn ipw(ds: &LoggedDataset, phi_hat: &Matrix) -> Result<Self> {
        Self::build(ds, phi_hat, None)
    }

    pub fn dr(ds: &LoggedDataset, phi_hat: &Matrix, mu_hat: &Matrix) -> Result<Self> {
        Self::build(ds, phi_hat, Some(mu_hat))
    }

    fn build(ds: &LoggedDataset, phi_hat: &Matrix, mu_hat: Option<&Matrix>) -> Result<Self> {
        check_dataset(ds)?;
        let n = ds.n();
        let r = match mu_hat {
            Some(mu) => residuals(ds, mu),
            None => ds.y.clone(),
        };
        let coef = (0..n)
            .map(|i| {
                let phi = phi_hat[(i, ds.t[i])];
                if phi > 0.0 {
                    Ok(r[i] / (n as f64 * phi))
                } else {
                    Err(Error::ZeroPropensity { row: i })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            x: ds.x.clone(),
            m: ds.m,
            treatments: ds.t.clone(),
            coef,
            mu_hat: mu_hat.cloned(),
        })
    }

    pub fn value(&self, p: &PolicyAssignment) -> f64 {
        let mut v: f64 = (0..p.n()).map(|i| self.coef[i] * p.get(i, self.treatments[i])).sum();
        if let Some(mu) = &self.mu_hat {
            v += tau_direct(p, mu);
        }
        v
    }

    pub fn assignment_gradient(&self) -> Matrix {
        let n = self.treatments.len();
        let mut g = match &self.mu_hat {
            Some(mu) => mu / n as f64,
            None => Matrix::zeros(n, self.m),
        };
        for i in 0..n {
            g[(i, self.treatments[i])] += self.coef[i];
        }
        g
    }
}

impl PolicyObjective for PlugInObjective {
    fn eval(&mut self, flat: &[f64]) -> Eval {
        let beta = Matrix::from_row_slice(self.m, self.x.ncols() + 1, flat);
        match softmax_assignment(&beta, &self.x) {
            Ok(p) => {
                let value = self.value(&p);
                let gb = chain_to_beta(&self.assignment_gradient(), &p, &self.x);
                Eval {
                    value,
                    grad: flatten(&gb),
                    aux: None,
                }
            }
            Err(_) => Eval::failed(flat.len()),
        }
    }
}

fn flatten(m: &Matrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for r in 0..m.nrows() {
        out.extend(m.row(r).iter());
    }
    out
}

/// Gaussian initial parameters for restart `index`; each restart draws from
/// its own stream of the master seed.
pub fn initial_beta(m: usize, d: usize, seed: u64, index: usize, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..m * (d + 1))
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            scale * z
        })
        .collect()
}

/// Outcome of one BFGS run.
#[derive(Debug, Clone)]
pub struct RestartResult {
    pub index: usize,
    pub policy: LogitPolicy,
    pub objective: f64,
    pub converged: bool,
    pub trace: Vec<TraceStep>,
}

/// Runs restart `index` of a learner.
pub fn run_restart<O: PolicyObjective>(
    objective: &mut O,
    m: usize,
    d: usize,
    lcfg: &LearnerConfig,
    index: usize,
) -> RestartResult {
    let x0 = initial_beta(m, d, lcfg.seed, index, lcfg.init_scale);
    let res = bfgs::minimize(|b| objective.eval(b), &x0, &lcfg.bfgs());
    RestartResult {
        index,
        policy: LogitPolicy::from_flat(m, d, &res.x),
        objective: res.value,
        converged: res.converged,
        trace: res.trace,
    }
}

/// Learned policy plus the per-restart record.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    /// Index of the winning restart.
    pub best: usize,
    pub policy: LogitPolicy,
    pub objective: f64,
    /// Trace of the winning restart.
    pub trace: Vec<TraceStep>,
    pub restarts: Vec<RestartResult>,
}

/// Picks the restart with the lowest finite final objective; ties go to the
/// lower restart index.
pub fn select_best(mut runs: Vec<RestartResult>) -> Result<LearnOutcome> {
    runs.sort_by_key(|r| r.index);
    let best = runs
        .iter()
        .filter(|r| r.objective.is_finite())
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.index.cmp(&b.index)))
        .ok_or(Error::AllRestartsFailed)?;
    Ok(LearnOutcome {
        best: best.index,
        policy: best.policy.clone(),
        objective: best.objective,
        trace: best.trace.clone(),
        restarts: runs.clone(),
    })
}

/// Runs every restart sequentially on clones of `objective`.
pub fn learn_with<O: PolicyObjective + Clone>(
    objective: &O,
    m: usize,
    d: usize,
    lcfg: &LearnerConfig,
) -> Result<LearnOutcome> {
    lcfg.validate()?;
    let runs = (0..lcfg.restarts)
        .map(|r| run_restart(&mut objective.clone(), m, d, lcfg, r))
        .collect();
    select_best(runs)
}

/// Balanced policy learner with the vanilla weighted estimate.
pub fn learn_balanced(ds: &LoggedDataset, cfg: &BalanceConfig, lcfg: &LearnerConfig) -> Result<LearnOutcome> {
    lcfg.validate()?;
    let obj = BalancedObjective::new(ds, cfg, lcfg.lambda_reg, None, lcfg.qp_tol)?;
    learn_with(&obj, ds.m, ds.d(), lcfg)
}

/// Balanced policy learner with the doubly robust estimate.
pub fn learn_balanced_dr(
    ds: &LoggedDataset,
    cfg: &BalanceConfig,
    lcfg: &LearnerConfig,
    mu_hat: &Matrix,
) -> Result<LearnOutcome> {
    lcfg.validate()?;
    let obj = BalancedObjective::new(ds, cfg, lcfg.lambda_reg, Some(mu_hat), lcfg.qp_tol)?;
    learn_with(&obj, ds.m, ds.d(), lcfg)
}

/// Minimizes the IPW estimate over logit policies.
pub fn learn_ipw_logit(ds: &LoggedDataset, phi_hat: &Matrix, lcfg: &LearnerConfig) -> Result<LearnOutcome> {
    lcfg.validate()?;
    learn_with(&PlugInObjective::ipw(ds, phi_hat)?, ds.m, ds.d(), lcfg)
}

/// Minimizes the DR estimate over logit policies.
pub fn learn_dr_logit(
    ds: &LoggedDataset,
    phi_hat: &Matrix,
    mu_hat: &Matrix,
    lcfg: &LearnerConfig,
) -> Result<LearnOutcome> {
    lcfg.validate()?;
    learn_with(&PlugInObjective::dr(ds, phi_hat, mu_hat)?, ds.m, ds.d(), lcfg)
}

/// Direct-method policy: the arm with the smallest predicted outcome.
#[derive(Debug, Clone)]
pub struct DirectPolicy {
    pub model: RegressionModel,
}

impl Policy for DirectPolicy {
    fn n_arms(&self) -> usize {
        self.model.m()
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mu = self.model.predict(x);
        let best = argmin(&mu);
        let mut p = vec![0.0; mu.len()];
        p[best] = 1.0;
        p
    }
}

/// Index of the smallest entry; ties go to the lowest index.
pub fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x < v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ConstantPolicy;
    use crate::data::assignment_of;
    use rand::Rng;

    fn toy(seed: u64, n: usize, m: usize) -> LoggedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Matrix::from_fn(n, 2, |_, _| rng.random_range(-1.0..1.0));
        let t: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] * (t[i] as f64 - 1.0) + rng.random_range(0.0..0.3)).collect();
        LoggedDataset::new(x, t, y, m)
    }

    #[test]
    fn initial_beta_is_deterministic_per_stream() {
        assert_eq!(initial_beta(3, 2, 7, 1, 1.0), initial_beta(3, 2, 7, 1, 1.0));
        assert_ne!(initial_beta(3, 2, 7, 1, 1.0), initial_beta(3, 2, 7, 2, 1.0));
    }

    #[test]
    fn single_arm_learner_is_trivial() {
        let mut ds = toy(1, 12, 2);
        ds.m = 1;
        ds.t.iter_mut().for_each(|t| *t = 0);
        let lcfg = LearnerConfig {
            restarts: 2,
            ..LearnerConfig::default()
        };
        let cfg = BalanceConfig::default();
        let out = learn_balanced(&ds, &cfg, &lcfg).unwrap();
        let p = assignment_of(&ConstantPolicy { arm: 0, m: 1 }, &ds.x).unwrap();
        let sol = crate::balance::solve_weights(&p, &ds.t, &cfg, &cfg.grams(&ds.x, 1).unwrap(), &QpOptions::default())
            .unwrap();
        assert!((out.objective - tau_weighted(&sol.w, &ds.y)).abs() < 1e-9);
    }

    #[test]
    fn best_of_restarts_is_minimal() {
        let ds = toy(3, 15, 3);
        let lcfg = LearnerConfig {
            restarts: 3,
            max_iters: 15,
            ..LearnerConfig::default()
        };
        let out = learn_balanced(&ds, &BalanceConfig::default(), &lcfg).unwrap();
        for r in &out.restarts {
            assert!(out.objective <= r.objective);
            for w in r.trace.windows(2) {
                assert!(w[1].objective <= w[0].objective);
            }
        }
    }

    #[test]
    fn dr_with_zero_model_tracks_vanilla() {
        let ds = toy(5, 12, 3);
        let lcfg = LearnerConfig {
            restarts: 2,
            max_iters: 10,
            ..LearnerConfig::default()
        };
        let cfg = BalanceConfig::default();
        let a = learn_balanced(&ds, &cfg, &lcfg).unwrap();
        let b = learn_balanced_dr(&ds, &cfg, &lcfg, &Matrix::zeros(12, 3)).unwrap();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn plug_in_gradient_matches_finite_differences() {
        let ds = toy(9, 10, 3);
        let phi = Matrix::from_element(10, 3, 1.0 / 3.0);
        let mu = Matrix::from_fn(10, 3, |i, t| 0.1 * (i + t) as f64);
        for mut obj in [PlugInObjective::ipw(&ds, &phi).unwrap(), PlugInObjective::dr(&ds, &phi, &mu).unwrap()] {
            let b0 = initial_beta(3, 2, 1, 0, 1.0);
            let e = obj.eval(&b0);
            let h = 1e-6;
            for k in 0..b0.len() {
                let mut up = b0.clone();
                up[k] += h;
                let mut dn = b0.clone();
                dn[k] -= h;
                let fd = (obj.eval(&up).value - obj.eval(&dn).value) / (2.0 * h);
                assert!((fd - e.grad[k]).abs() <= 1e-6 * fd.abs().max(1e-2), "{k}: {fd} vs {}", e.grad[k]);
            }
        }
    }

    #[test]
    fn restarts_must_be_positive() {
        let ds = toy(2, 8, 2);
        let lcfg = LearnerConfig {
            restarts: 0,
            ..LearnerConfig::default()
        };
        assert!(learn_balanced(&ds, &BalanceConfig::default(), &lcfg).is_err());
    }
}
