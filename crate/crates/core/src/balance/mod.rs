//! Worst-case conditional MSE of weighted estimators and the balancing-weight
//! QP over the scaled simplex `{W >= 0, sum W = n}`.
//!
//! With per-arm kernels `K_t` and scales `gamma_t` the objective is
//!
//! ```text
//! E^2(W) = sum_t gamma_t^2 z_t^T K_t z_t + W^T Lambda W / n^2,
//! z_t[i] = W_i [T_i = t] - P[i][t],
//! ```
//!
//! which expands to the quadratic `W^T Q W - 2 c^T W + const`.

mod qp;

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

pub use qp::{kkt_residual, solve_qp, Duals, QpOptions, QpSolution};

use crate::data::PolicyAssignment;
use crate::error::{Error, Result};
use crate::kernels::{ArmGrams, KernelSpec};
use crate::{Matrix, Vector};

/// Variance penalty matrix.
#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSpec {
    /// `kappa * I`.
    Scalar(f64),
    Matrix(Matrix),
}

impl LambdaSpec {
    /// `W^T Lambda W`.
    pub fn quad(&self, w: &[f64]) -> f64 {
        match self {
            LambdaSpec::Scalar(k) => k * w.iter().map(|v| v * v).sum::<f64>(),
            LambdaSpec::Matrix(l) => {
                let v = Vector::from_column_slice(w);
                v.dot(&(l * &v))
            }
        }
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            LambdaSpec::Scalar(k) => {
                if i == j {
                    *k
                } else {
                    0.0
                }
            }
            LambdaSpec::Matrix(l) => l[(i, j)],
        }
    }
}

/// Per-arm kernels: one shared spec or one spec per arm.
#[derive(Debug, Clone, PartialEq)]
pub enum ArmKernels {
    Shared(KernelSpec),
    PerArm(Vec<KernelSpec>),
}

/// Whether the imbalance enters as the raw double sum `z^T K z` or as the
/// squared discrepancy of means, `z^T K z / n^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImbalanceScale {
    #[default]
    Sum,
    /// Puts the imbalance on the same `1/n^2` footing as the variance term.
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceConfig {
    /// Arm scales; a single entry is broadcast to every arm.
    pub gammas: Vec<f64>,
    pub lambda: LambdaSpec,
    /// Norm exponent. Only 2 is supported.
    pub p: u32,
    pub kernels: ArmKernels,
    pub imbalance: ImbalanceScale,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        Self {
            gammas: vec![1.0],
            lambda: LambdaSpec::Scalar(1.0),
            p: 2,
            kernels: ArmKernels::Shared(KernelSpec::default()),
            imbalance: ImbalanceScale::Sum,
        }
    }
}

impl BalanceConfig {
    #[inline]
    pub fn gamma(&self, t: usize) -> f64 {
        if self.gammas.len() == 1 {
            self.gammas[0]
        } else {
            self.gammas[t]
        }
    }

    /// Multiplier of `B_t^2` in the objective for a sample of size `n`.
    pub fn imbalance_weight(&self, t: usize, n: usize) -> f64 {
        let g2 = self.gamma(t).powi(2);
        match self.imbalance {
            ImbalanceScale::Sum => g2,
            ImbalanceScale::Mean => g2 / (n * n) as f64,
        }
    }

    pub fn with_imbalance(mut self, scale: ImbalanceScale) -> Self {
        self.imbalance = scale;
        self
    }

    pub fn with_lambda(mut self, kappa: f64) -> Self {
        self.lambda = LambdaSpec::Scalar(kappa);
        self
    }

    pub fn with_gammas(mut self, gammas: Vec<f64>) -> Self {
        self.gammas = gammas;
        self
    }

    pub fn with_kernel(mut self, spec: KernelSpec) -> Self {
        self.kernels = ArmKernels::Shared(spec);
        self
    }

    /// Checks the config against `m` arms and `n` units.
    pub fn validate(&self, m: usize, n: usize) -> Result<()> {
        if self.p != 2 {
            return Err(Error::UnsupportedExponent(self.p));
        }
        if self.gammas.len() != 1 && self.gammas.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: self.gammas.len(),
            });
        }
        if self.gammas.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
            return Err(Error::InvalidInput("gamma must be positive".into()));
        }
        match &self.lambda {
            LambdaSpec::Scalar(k) if !(*k >= 0.0) => {
                return Err(Error::InvalidInput("lambda must be nonnegative".into()))
            }
            LambdaSpec::Matrix(l) if l.nrows() != n || l.ncols() != n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: l.nrows(),
                })
            }
            _ => {}
        }
        if let ArmKernels::PerArm(specs) = &self.kernels {
            if specs.len() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: specs.len(),
                });
            }
        }
        Ok(())
    }

    /// Gram matrices for every arm on the sample `x`.
    pub fn grams(&self, x: &Matrix, m: usize) -> Result<ArmGrams> {
        match &self.kernels {
            ArmKernels::Shared(spec) => ArmGrams::build(core::slice::from_ref(spec), x, m),
            ArmKernels::PerArm(specs) => ArmGrams::build(specs, x, m),
        }
    }
}

/// `z^T K_t z` with `z_i = W_i [T_i = t] - P_t[i]`.
pub fn imbalance_sq(w: &[f64], p_t: &[f64], treatments: &[usize], k: &Matrix, arm: usize) -> f64 {
    let z: Vec<f64> = (0..w.len())
        .map(|i| if treatments[i] == arm { w[i] } else { 0.0 } - p_t[i])
        .collect();
    quad_form(k, &z)
}

fn quad_form(k: &Matrix, z: &[f64]) -> f64 {
    let n = z.len();
    let mut total = 0.0;
    for j in 0..n {
        if z[j] == 0.0 {
            continue;
        }
        let col = k.column(j);
        let mut s = 0.0;
        for i in 0..n {
            s += z[i] * col[i];
        }
        total += s * z[j];
    }
    total
}

/// Value of the objective and its pieces.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveParts {
    /// `E^2`.
    pub total: f64,
    /// `B_t^2` per arm, before the `gamma_t^2` scale.
    pub imbalance_sq: Vec<f64>,
    /// `W^T Lambda W / n^2`.
    pub variance: f64,
}

pub fn objective(
    w: &[f64],
    p: &PolicyAssignment,
    treatments: &[usize],
    cfg: &BalanceConfig,
    grams: &ArmGrams,
) -> Result<ObjectiveParts> {
    if cfg.p != 2 {
        return Err(Error::UnsupportedExponent(cfg.p));
    }
    let n = w.len();
    check_len(p.n(), n)?;
    check_len(treatments.len(), n)?;
    let m = p.m();
    let mut per_arm = Vec::with_capacity(m);
    let mut total = 0.0;
    for t in 0..m {
        let b2 = imbalance_sq(w, &p.column(t), treatments, grams.arm(t).matrix(), t);
        total += cfg.imbalance_weight(t, n) * b2;
        per_arm.push(b2);
    }
    let variance = cfg.lambda.quad(w) / (n * n) as f64;
    Ok(ObjectiveParts {
        total: total + variance,
        imbalance_sq: per_arm,
        variance,
    })
}

fn check_len(got: usize, expected: usize) -> Result<()> {
    if got != expected {
        Err(Error::DimensionMismatch { expected, got })
    } else {
        Ok(())
    }
}

/// `E^2(W) = W^T Q W - 2 c^T W + constant`.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    pub q: Matrix,
    pub c: Vector,
    pub constant: f64,
}

impl QuadraticProblem {
    pub fn value(&self, w: &[f64]) -> f64 {
        let v = Vector::from_column_slice(w);
        v.dot(&(&self.q * &v)) - 2.0 * self.c.dot(&v) + self.constant
    }

    /// `2 Q W - 2 c`.
    pub fn gradient(&self, w: &[f64]) -> Vector {
        let v = Vector::from_column_slice(w);
        (&self.q * &v - &self.c) * 2.0
    }
}

/// The policy-independent quadratic part `Q` for a fixed sample, together
/// with what is needed to form `c` for any policy. Learners build this once.
#[derive(Debug, Clone)]
pub struct BalanceProblem {
    pub(crate) q: Matrix,
    grams: ArmGrams,
    gammas_sq: Vec<f64>,
    treatments: Vec<usize>,
}

impl BalanceProblem {
    pub fn new(treatments: &[usize], cfg: &BalanceConfig, grams: &ArmGrams) -> Result<Self> {
        let n = treatments.len();
        let m = grams.m();
        cfg.validate(m, n)?;
        for t in 0..m {
            check_len(grams.arm(t).n(), n)?;
        }
        let gammas_sq: Vec<f64> = (0..m).map(|t| cfg.imbalance_weight(t, n)).collect();
        let scale = 1.0 / (n * n) as f64;
        let q = Matrix::from_fn(n, n, |i, j| {
            let mut v = cfg.lambda.entry(i, j) * scale;
            let ti = treatments[i];
            if ti == treatments[j] && ti < m {
                v += gammas_sq[ti] * grams.arm(ti).get(i, j);
            }
            v
        });
        Ok(Self {
            q,
            grams: grams.clone(),
            gammas_sq,
            treatments: treatments.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.treatments.len()
    }

    pub fn m(&self) -> usize {
        self.gammas_sq.len()
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn grams(&self) -> &ArmGrams {
        &self.grams
    }

    pub fn treatments(&self) -> &[usize] {
        &self.treatments
    }

    /// Effective multiplier of `B_t^2`, see [`BalanceConfig::imbalance_weight`].
    pub fn gamma_sq(&self, t: usize) -> f64 {
        self.gammas_sq[t]
    }

    /// `K_t P_t` for every arm, as columns of an n x m matrix.
    pub fn kernel_times_policy(&self, p: &Matrix) -> Matrix {
        let n = self.n();
        let mut out = Matrix::zeros(n, self.m());
        for t in 0..self.m() {
            let kp = self.grams.arm(t).matrix() * p.column(t);
            out.set_column(t, &kp);
        }
        debug_assert_eq!(out.nrows(), n);
        out
    }

    /// Linear term and constant for the policy `p`.
    pub fn linear_part(&self, p: &PolicyAssignment) -> Result<(Vector, f64)> {
        check_len(p.n(), self.n())?;
        check_len(p.m(), self.m())?;
        let kp = self.kernel_times_policy(p.matrix());
        let c = Vector::from_fn(self.n(), |i, _| {
            let t = self.treatments[i];
            self.gammas_sq[t] * kp[(i, t)]
        });
        let constant = (0..self.m())
            .map(|t| self.gammas_sq[t] * p.matrix().column(t).dot(&kp.column(t)))
            .sum();
        Ok((c, constant))
    }

    pub fn assemble(&self, p: &PolicyAssignment) -> Result<QuadraticProblem> {
        let (c, constant) = self.linear_part(p)?;
        Ok(QuadraticProblem {
            q: self.q.clone(),
            c,
            constant,
        })
    }

    /// Solves for the balancing weights of policy `p`.
    pub fn solve(
        &self,
        p: &PolicyAssignment,
        cfg: &BalanceConfig,
        opts: &QpOptions,
    ) -> Result<WeightsSolution> {
        let (c, constant) = self.linear_part(p)?;
        let sol = solve_qp(&self.q, &c, opts)?;
        let parts = objective(&sol.w, p, &self.treatments, cfg, &self.grams)?;
        let tau = active_threshold(self.n());
        let active_set = sol.w.iter().map(|&w| w > tau).collect();
        let quad_value = {
            let v = Vector::from_column_slice(&sol.w);
            v.dot(&(&self.q * &v)) - 2.0 * c.dot(&v) + constant
        };
        Ok(WeightsSolution {
            objective: parts.total.max(0.0),
            quad_value,
            imbalance_per_arm: parts.imbalance_sq.iter().map(|b| b.max(0.0).sqrt()).collect(),
            imbalance_sq_per_arm: parts.imbalance_sq,
            variance_term: parts.variance,
            active_set,
            kkt_residual: sol.kkt_residual,
            iterations: sol.iterations,
            duals: sol.duals,
            w: sol.w,
        })
    }
}

/// Threshold `1e-8 * n` above which a weight counts as positive.
#[inline]
pub fn active_threshold(n: usize) -> f64 {
    1e-8 * n as f64
}

/// Builds `Q`, `c` and the constant of the objective for policy `p`.
pub fn assemble_qp(
    p: &PolicyAssignment,
    treatments: &[usize],
    cfg: &BalanceConfig,
    grams: &ArmGrams,
) -> Result<QuadraticProblem> {
    BalanceProblem::new(treatments, cfg, grams)?.assemble(p)
}

/// Balancing weights `W*(pi)` with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightsSolution {
    pub w: Vec<f64>,
    /// `E^2` evaluated directly from the per-arm imbalances.
    pub objective: f64,
    /// `E^2` evaluated through the quadratic form; agrees with `objective`
    /// up to rounding.
    pub quad_value: f64,
    /// `B_t` per arm.
    pub imbalance_per_arm: Vec<f64>,
    /// `B_t^2` per arm.
    pub imbalance_sq_per_arm: Vec<f64>,
    pub variance_term: f64,
    /// `W_i > 1e-8 n`.
    pub active_set: Vec<bool>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub duals: Duals,
}

impl WeightsSolution {
    /// `||W||_0` at the active threshold.
    pub fn support(&self) -> usize {
        self.active_set.iter().filter(|&&a| a).count()
    }
}

/// Solves `min E^2(W, pi)` over the scaled simplex.
pub fn solve_weights(
    p: &PolicyAssignment,
    treatments: &[usize],
    cfg: &BalanceConfig,
    grams: &ArmGrams,
    opts: &QpOptions,
) -> Result<WeightsSolution> {
    BalanceProblem::new(treatments, cfg, grams)?.solve(p, cfg, opts)
}
