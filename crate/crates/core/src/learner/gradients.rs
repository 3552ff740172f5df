//! Implicit gradients of balanced estimates with respect to the policy
//! assignment, obtained by differentiating the KKT conditions of the weight
//! QP on its active set.
//!
//! With `H` the Hessian of the objective in `W`, `F` the basis
//! `F_ij = [i = j] - [i = n]` of the null space of `1^T`,
//! `H~ = -F (F^T H F)^{-1} F^T`, `A = diag(W_i > 0)` and
//! `J_t[i][j] = -2 gamma_t^2 [T_i = t] K_t(i, j)`:
//!
//! ```text
//! dW / dP_t = H~ (I - (A + (I - A) H~)^{-1} (I - A) H~) J_t
//! ```
//!
//! `H` is `2 Q` for the objective as implemented here, so the variance term
//! enters as `2 Lambda / n^2`.

use alloc::vec::Vec;

use num_traits::Float;

use crate::balance::{BalanceProblem, WeightsSolution};
use crate::data::PolicyAssignment;
use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Regularizer gradients are zero below this value of `E`.
pub const MIN_OBJECTIVE_ROOT: f64 = 1e-12;

/// Policy-independent part of the implicit gradient: `H~` for a fixed sample.
#[derive(Debug, Clone)]
pub struct ImplicitGradient {
    h_tilde: Matrix,
}

fn invert_spd_with_retry(s: Matrix) -> Result<Matrix> {
    let dim = s.nrows();
    if let Some(ch) = nalgebra::Cholesky::new(s.clone()) {
        return Ok(ch.inverse());
    }
    let ridge = 1e-10 * s.trace().abs().max(f64::MIN_POSITIVE) / dim as f64;
    let mut r = s;
    for i in 0..dim {
        r[(i, i)] += ridge;
    }
    if let Some(ch) = nalgebra::Cholesky::new(r.clone()) {
        return Ok(ch.inverse());
    }
    r.try_inverse().ok_or(Error::Singular("F^T H F"))
}

impl ImplicitGradient {
    pub fn new(problem: &BalanceProblem) -> Result<Self> {
        Self::from_hessian(&(problem.q() * 2.0))
    }

    /// Builds `H~` from an explicit Hessian.
    pub fn from_hessian(h: &Matrix) -> Result<Self> {
        let n = h.nrows();
        if n < 2 {
            return Ok(Self {
                h_tilde: Matrix::zeros(n, n),
            });
        }
        let last = n - 1;
        // F^T H F for F = [I; -1^T].
        let s = Matrix::from_fn(last, last, |a, b| {
            h[(a, b)] - h[(a, last)] - h[(last, b)] + h[(last, last)]
        });
        let s_inv = invert_spd_with_retry(s)?;
        let row_sums: Vec<f64> = (0..last).map(|a| s_inv.row(a).sum()).collect();
        let total: f64 = row_sums.iter().sum();
        let h_tilde = Matrix::from_fn(n, n, |a, b| match (a == last, b == last) {
            (false, false) => -s_inv[(a, b)],
            (false, true) => row_sums[a],
            (true, false) => row_sums[b],
            (true, true) => -total,
        });
        Ok(Self { h_tilde })
    }

    pub fn h_tilde(&self) -> &Matrix {
        &self.h_tilde
    }

    /// Row vector `v = r^T H~ (I - (A + (I - A) H~)^{-1} (I - A) H~)`.
    pub fn sensitivity(&self, residual: &[f64], active: &[bool]) -> Result<Vector> {
        let n = residual.len();
        let ht = &self.h_tilde;
        let r = Vector::from_column_slice(residual);
        // H~ is symmetric, so r^T H~ = (H~ r)^T.
        let a = ht * &r;
        let mut g = Matrix::zeros(n, n);
        for i in 0..n {
            if active[i] {
                g[(i, i)] = 1.0;
            } else {
                g.row_mut(i).copy_from(&ht.row(i));
            }
        }
        let x = match g.transpose().lu().solve(&a) {
            Some(x) if x.iter().all(|v| v.is_finite()) => x,
            _ => {
                let ridge = 1e-10 * g.trace().abs().max(1.0) / n as f64;
                for i in 0..n {
                    g[(i, i)] += ridge;
                }
                g.transpose()
                    .lu()
                    .solve(&a)
                    .ok_or(Error::Singular("A + (I - A) H~"))?
            }
        };
        // v = a - ((I - A) H~)^T x = a - H~ (I - A) x
        let masked = Vector::from_fn(n, |i, _| if active[i] { 0.0 } else { x[i] });
        Ok(a - ht * masked)
    }

    /// `dW / dP_t` as a dense n x n Jacobian; used by tests and diagnostics.
    pub fn weight_jacobian(&self, problem: &BalanceProblem, active: &[bool], t: usize) -> Result<Matrix> {
        let n = problem.n();
        let mut cols = Matrix::zeros(n, n);
        // Row i of the result is e_i^T times the operator; assemble by rows.
        for i in 0..n {
            let mut e = alloc::vec![0.0; n];
            e[i] = 1.0;
            let v = self.sensitivity(&e, active)?;
            let row = apply_j(problem, &v, t);
            cols.row_mut(i).copy_from(&row.transpose());
        }
        Ok(cols)
    }
}

/// `v^T J_t` with `J_t[i][j] = -2 gamma_t^2 [T_i = t] K_t(i, j)`.
fn apply_j(problem: &BalanceProblem, v: &Vector, t: usize) -> Vector {
    let n = problem.n();
    let k = problem.grams().arm(t).matrix();
    let scale = -2.0 * problem.gamma_sq(t);
    let treat = problem.treatments();
    let mut out = Vector::zeros(n);
    for i in 0..n {
        if treat[i] != t || v[i] == 0.0 {
            continue;
        }
        let vi = scale * v[i];
        for j in 0..n {
            out[j] += vi * k[(i, j)];
        }
    }
    out
}

/// Gradients of the balanced estimate and of `E` with respect to `P[i][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentGradients {
    /// n x m, gradient of `tau` (vanilla or doubly robust).
    pub d_tau: Matrix,
    /// n x m, gradient of `E = sqrt(E^2)`.
    pub d_reg: Matrix,
}

/// Implicit gradients at a solved weight problem.
///
/// `residual` is `Y` for the vanilla estimate or `Y - mu_hat[T]` for the
/// doubly robust one, in which case `mu_hat` adds its direct-term gradient
/// `mu_hat[i][t] / n`.
pub fn implicit_gradients(
    sol: &WeightsSolution,
    residual: &[f64],
    p: &PolicyAssignment,
    problem: &BalanceProblem,
    workspace: &ImplicitGradient,
    mu_hat: Option<&Matrix>,
) -> Result<AssignmentGradients> {
    let n = problem.n();
    let m = problem.m();
    if residual.len() != n || p.n() != n || sol.w.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: residual.len(),
        });
    }
    let v = workspace.sensitivity(residual, &sol.active_set)?;
    let inv_n = 1.0 / n as f64;
    let mut d_tau = Matrix::zeros(n, m);
    for t in 0..m {
        let col = apply_j(problem, &v, t) * inv_n;
        d_tau.set_column(t, &col);
    }
    if let Some(mu) = mu_hat {
        d_tau += mu * inv_n;
    }

    let root = sol.objective.max(0.0).sqrt();
    let mut d_reg = Matrix::zeros(n, m);
    if root >= MIN_OBJECTIVE_ROOT {
        let treat = problem.treatments();
        for t in 0..m {
            // D_t = gamma_t^2 K_t (W [T = t] - P_t)
            let z = Vector::from_fn(n, |j, _| {
                let wj = if treat[j] == t { sol.w[j] } else { 0.0 };
                wj - p.get(j, t)
            });
            let d = problem.grams().arm(t).matrix() * z * problem.gamma_sq(t);
            d_reg.set_column(t, &(-d / root));
        }
    }
    Ok(AssignmentGradients { d_tau, d_reg })
}
