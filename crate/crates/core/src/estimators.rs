//! Policy-value estimators: weighted, doubly robust, direct, the inverse
//! propensity family, and balanced evaluation.
//!
//! Normalized weights are scaled to sum to `n`, so every weight vector lives
//! in the same set as the balancing weights and `tau_W = mean(W * Y)` is the
//! usual self-normalized estimate.

use alloc::format;
use alloc::vec::Vec;

use crate::balance::{active_threshold, BalanceConfig, QpOptions, WeightsSolution};
use crate::data::{LoggedDataset, PolicyAssignment};
use crate::error::{Error, Result};
use crate::Matrix;

/// Default clip level for the clipped estimators.
pub const DEFAULT_CLIP: f64 = 0.05;

/// `(1/n) sum W_i Y_i`.
pub fn tau_weighted(w: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), y.len());
    w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / y.len() as f64
}

/// Plug-in estimate `(1/n) sum_i sum_t P[i][t] mu_hat[i][t]`.
pub fn tau_direct(p: &PolicyAssignment, mu_hat: &Matrix) -> f64 {
    p.matrix().component_mul(mu_hat).sum() / p.n() as f64
}

/// Residuals `Y_i - mu_hat[i][T_i]`.
pub fn residuals(ds: &LoggedDataset, mu_hat: &Matrix) -> Vec<f64> {
    (0..ds.n()).map(|i| ds.y[i] - mu_hat[(i, ds.t[i])]).collect()
}

/// Doubly robust estimate: the direct term plus weighted residuals.
pub fn tau_dr(w: &[f64], p: &PolicyAssignment, mu_hat: &Matrix, ds: &LoggedDataset) -> f64 {
    tau_direct(p, mu_hat) + tau_weighted(w, &residuals(ds, mu_hat))
}

/// Moment discrepancy `B(W, pi; f) = (1/n) sum_t sum_i (W_i [T_i = t] - P[i][t]) f[i][t]`.
pub fn bias_functional(w: &[f64], p: &PolicyAssignment, treatments: &[usize], f: &Matrix) -> f64 {
    let n = w.len();
    let mut total = 0.0;
    for i in 0..n {
        for t in 0..p.m() {
            let wi = if treatments[i] == t { w[i] } else { 0.0 };
            total += (wi - p.get(i, t)) * f[(i, t)];
        }
    }
    total / n as f64
}

/// `P[i][T_i] / phi_hat[i][T_i]`.
pub fn weights_ipw(p: &PolicyAssignment, treatments: &[usize], phi_hat: &Matrix) -> Result<Vec<f64>> {
    treatments
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let phi = phi_hat[(i, t)];
            if !(phi > 0.0) {
                Err(Error::ZeroPropensity { row: i })
            } else {
                Ok(p.get(i, t) / phi)
            }
        })
        .collect()
}

/// `P[i][T_i] / max(M, phi_hat[i][T_i])`.
pub fn weights_cipw(p: &PolicyAssignment, treatments: &[usize], phi_hat: &Matrix, clip: f64) -> Result<Vec<f64>> {
    if !(clip > 0.0) {
        return Err(Error::InvalidInput(format!("clip level must be positive, got {clip}")));
    }
    Ok(treatments
        .iter()
        .enumerate()
        .map(|(i, &t)| p.get(i, t) / phi_hat[(i, t)].max(clip))
        .collect())
}

/// Rescales weights to sum to `n`.
pub fn normalize_weights(raw: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = raw.iter().sum();
    if !(sum > 0.0) {
        return Err(Error::NoOverlap);
    }
    let n = raw.len() as f64;
    Ok(raw.iter().map(|w| n * w / sum).collect())
}

pub fn weights_nipw(p: &PolicyAssignment, treatments: &[usize], phi_hat: &Matrix) -> Result<Vec<f64>> {
    normalize_weights(&weights_ipw(p, treatments, phi_hat)?)
}

pub fn weights_ncipw(p: &PolicyAssignment, treatments: &[usize], phi_hat: &Matrix, clip: f64) -> Result<Vec<f64>> {
    normalize_weights(&weights_cipw(p, treatments, phi_hat, clip)?)
}

/// `#{i : W_i > 1e-8 n}`.
pub fn support(w: &[f64]) -> usize {
    let tau = active_threshold(w.len());
    w.iter().filter(|&&v| v > tau).count()
}

/// How the weights of a weighting estimator are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightScheme {
    Ipw,
    Nipw,
    Cipw(f64),
    Ncipw(f64),
    Balanced,
}

impl WeightScheme {
    pub fn label(&self) -> alloc::string::String {
        match self {
            WeightScheme::Ipw => "ipw".into(),
            WeightScheme::Nipw => "nipw".into(),
            WeightScheme::Cipw(m) => format!("{m}-cipw"),
            WeightScheme::Ncipw(m) => format!("{m}-ncipw"),
            WeightScheme::Balanced => "balanced".into(),
        }
    }

    /// Propensity-based weights; `None` for the balanced scheme.
    pub fn propensity_weights(
        &self,
        p: &PolicyAssignment,
        treatments: &[usize],
        phi_hat: &Matrix,
    ) -> Option<Result<Vec<f64>>> {
        match *self {
            WeightScheme::Ipw => Some(weights_ipw(p, treatments, phi_hat)),
            WeightScheme::Nipw => Some(weights_nipw(p, treatments, phi_hat)),
            WeightScheme::Cipw(m) => Some(weights_cipw(p, treatments, phi_hat, m)),
            WeightScheme::Ncipw(m) => Some(weights_ncipw(p, treatments, phi_hat, m)),
            WeightScheme::Balanced => None,
        }
    }
}

/// Components of the balance objective at the chosen weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSummary {
    pub objective: f64,
    pub imbalance_per_arm: Vec<f64>,
    pub variance_term: f64,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl From<&WeightsSolution> for ObjectiveSummary {
    fn from(s: &WeightsSolution) -> Self {
        Self {
            objective: s.objective,
            imbalance_per_arm: s.imbalance_per_arm.clone(),
            variance_term: s.variance_term,
            kkt_residual: s.kkt_residual,
            iterations: s.iterations,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub estimate: f64,
    pub method: alloc::string::String,
    /// `||W||_0`, when the estimator is weighting-based.
    pub weights_support: Option<usize>,
    pub weights: Option<Vec<f64>>,
    pub objective_parts: Option<ObjectiveSummary>,
    pub dr_used: bool,
}

impl EvaluationReport {
    /// Report for a weighting estimator with the given weights.
    pub fn weighted(
        method: impl Into<alloc::string::String>,
        ds: &LoggedDataset,
        p: &PolicyAssignment,
        w: Vec<f64>,
        mu_hat: Option<&Matrix>,
    ) -> Self {
        let estimate = match mu_hat {
            Some(mu) => tau_dr(&w, p, mu, ds),
            None => tau_weighted(&w, &ds.y),
        };
        Self {
            estimate,
            method: method.into(),
            weights_support: Some(support(&w)),
            weights: Some(w),
            objective_parts: None,
            dr_used: mu_hat.is_some(),
        }
    }

    pub fn direct(p: &PolicyAssignment, mu_hat: &Matrix) -> Self {
        Self {
            estimate: tau_direct(p, mu_hat),
            method: "direct".into(),
            weights_support: None,
            weights: None,
            objective_parts: None,
            dr_used: false,
        }
    }
}

/// Balanced evaluation: solves for `W*(pi)` and returns the weighted
/// estimate, or the doubly robust one when `mu_hat` is given.
pub fn evaluate_balanced(
    ds: &LoggedDataset,
    p: &PolicyAssignment,
    cfg: &BalanceConfig,
    mu_hat: Option<&Matrix>,
    opts: &QpOptions,
) -> Result<EvaluationReport> {
    ds.ensure_valid()?;
    if p.n() != ds.n() || p.m() != ds.m {
        return Err(Error::DimensionMismatch {
            expected: ds.n(),
            got: p.n(),
        });
    }
    let grams = cfg.grams(&ds.x, ds.m)?;
    let sol = crate::balance::solve_weights(p, &ds.t, cfg, &grams, opts)?;
    Ok(report_from_solution(ds, p, &sol, mu_hat))
}

/// Builds a report from an already solved weight problem.
pub fn report_from_solution(
    ds: &LoggedDataset,
    p: &PolicyAssignment,
    sol: &WeightsSolution,
    mu_hat: Option<&Matrix>,
) -> EvaluationReport {
    let method = if mu_hat.is_some() { "balanced-dr" } else { "balanced" };
    let mut report = EvaluationReport::weighted(method, ds, p, sol.w.clone(), mu_hat);
    report.weights_support = Some(sol.support());
    report.objective_parts = Some(ObjectiveSummary::from(sol));
    report
}
