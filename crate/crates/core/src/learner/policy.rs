use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::data::{Policy, PolicyAssignment};
use crate::error::{Error, Result};
use crate::Matrix;

/// Softmax-linear policy, `pi_t(x) ∝ exp(beta_t0 + beta_t^T x)`.
///
/// `beta` is m x (d + 1) with the intercept in column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitPolicy {
    pub beta: Matrix,
}

impl LogitPolicy {
    pub fn new(beta: Matrix) -> Self {
        Self { beta }
    }

    pub fn zeros(m: usize, d: usize) -> Self {
        Self {
            beta: Matrix::zeros(m, d + 1),
        }
    }

    /// From a row-major flat parameter vector.
    pub fn from_flat(m: usize, d: usize, flat: &[f64]) -> Self {
        Self {
            beta: Matrix::from_row_slice(m, d + 1, flat),
        }
    }

    /// Row-major flat parameters.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.beta.len());
        for t in 0..self.beta.nrows() {
            out.extend(self.beta.row(t).iter());
        }
        out
    }

    pub fn m(&self) -> usize {
        self.beta.nrows()
    }

    pub fn d(&self) -> usize {
        self.beta.ncols() - 1
    }

    pub fn assignment(&self, x: &Matrix) -> Result<PolicyAssignment> {
        softmax_assignment(&self.beta, x)
    }
}

impl Policy for LogitPolicy {
    fn n_arms(&self) -> usize {
        self.m()
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let m = self.m();
        let mut logits = vec![0.0; m];
        for t in 0..m {
            let mut v = self.beta[(t, 0)];
            for (k, xk) in x.iter().enumerate() {
                v += self.beta[(t, k + 1)] * xk;
            }
            logits[t] = v;
        }
        softmax_in_place(&mut logits);
        logits
    }
}

/// Max-shifted softmax.
pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `P[i][t] = softmax_t(beta_t0 + beta_t^T X_i)`.
pub fn softmax_assignment(beta: &Matrix, x: &Matrix) -> Result<PolicyAssignment> {
    if beta.ncols() != x.ncols() + 1 {
        return Err(Error::DimensionMismatch {
            expected: x.ncols() + 1,
            got: beta.ncols(),
        });
    }
    let n = x.nrows();
    let m = beta.nrows();
    let mut p = Matrix::zeros(n, m);
    let mut logits = vec![0.0; m];
    for i in 0..n {
        for t in 0..m {
            let mut v = beta[(t, 0)];
            for k in 0..x.ncols() {
                v += beta[(t, k + 1)] * x[(i, k)];
            }
            logits[t] = v;
        }
        softmax_in_place(&mut logits);
        for t in 0..m {
            p[(i, t)] = logits[t];
        }
    }
    Ok(PolicyAssignment::from_matrix_unchecked(p))
}

/// Chain rule from `d f / d P[i][t]` to `d f / d beta`, using
/// `d pi_t(X_i) / d beta_s = pi_t(X_i) ([t = s] - pi_s(X_i)) (1, X_i)`.
pub fn chain_to_beta(grad_p: &Matrix, p: &PolicyAssignment, x: &Matrix) -> Matrix {
    let n = x.nrows();
    let m = p.m();
    let d = x.ncols();
    let mut g = Matrix::zeros(m, d + 1);
    for i in 0..n {
        let mean: f64 = (0..m).map(|t| grad_p[(i, t)] * p.get(i, t)).sum();
        for s in 0..m {
            let coef = p.get(i, s) * (grad_p[(i, s)] - mean);
            if coef == 0.0 {
                continue;
            }
            g[(s, 0)] += coef;
            for k in 0..d {
                g[(s, k + 1)] += coef * x[(i, k)];
            }
        }
    }
    g
}
