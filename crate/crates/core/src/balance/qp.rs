//! Primal active-set solver for `min W^T Q W - 2 c^T W` over
//! `{W >= 0, sum W = n}` with dense PSD `Q`.
//!
//! Each iteration solves the equality-constrained problem on the current free
//! set through its bordered KKT system, then either steps to the first
//! blocking bound or frees the bound with the most negative multiplier.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct QpOptions {
    /// KKT residual required at termination.
    pub tol: f64,
    /// Active-set iterations; `None` means `10 n + 100`.
    pub max_iters: Option<usize>,
    /// Starting point, typically the previous solution.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_iters: None,
            warm_start: None,
        }
    }
}

impl QpOptions {
    pub fn warm(mut self, w: Vec<f64>) -> Self {
        self.warm_start = Some(w);
        self
    }
}

/// Multipliers of `sum W = n` (`nu`) and `W >= 0` (`lambda`), in the
/// convention `2 Q W - 2 c = nu 1 + lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct Duals {
    pub nu: f64,
    pub lambda: Vec<f64>,
}

impl Duals {
    /// Least-violation multipliers for a given primal point: `nu` averages the
    /// gradient over the support, `lambda` takes up the rest.
    pub fn estimate(w: &[f64], q: &Matrix, c: &Vector) -> Self {
        let g = gradient(q, c, w);
        let tau = super::active_threshold(w.len());
        let support: Vec<usize> = (0..w.len()).filter(|&i| w[i] > tau).collect();
        let nu = if support.is_empty() {
            g.iter().copied().fold(f64::INFINITY, f64::min)
        } else {
            support.iter().map(|&i| g[i]).sum::<f64>() / support.len() as f64
        };
        let lambda = g.iter().map(|gi| gi - nu).collect();
        Self { nu, lambda }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub w: Vec<f64>,
    pub duals: Duals,
    pub kkt_residual: f64,
    pub iterations: usize,
}

fn gradient(q: &Matrix, c: &Vector, w: &[f64]) -> Vector {
    let v = Vector::from_column_slice(w);
    (q * v - c) * 2.0
}

/// Max-norm of the stationarity, complementarity, dual and primal
/// feasibility violations of `(w, duals)` for the simplex QP.
pub fn kkt_residual(w: &[f64], duals: &Duals, q: &Matrix, c: &Vector) -> f64 {
    let n = w.len();
    let g = gradient(q, c, w);
    let mut r: f64 = 0.0;
    for i in 0..n {
        let lam = duals.lambda[i];
        r = r.max((g[i] - duals.nu - lam).abs());
        r = r.max((lam * w[i]).abs());
        r = r.max((-lam).max(0.0));
        r = r.max((-w[i]).max(0.0));
    }
    let sum: f64 = w.iter().sum();
    r.max((sum - n as f64).abs() / n.max(1) as f64)
}

/// Projects an arbitrary starting point onto the feasible set by clipping
/// and rescaling; falls back to uniform weights.
fn feasible_start(start: Option<&[f64]>, n: usize) -> Vec<f64> {
    let total = n as f64;
    if let Some(s) = start.filter(|s| s.len() == n) {
        let clipped: Vec<f64> = s
            .iter()
            .map(|&v| if v.is_finite() && v > 0.0 { v } else { 0.0 })
            .collect();
        let sum: f64 = clipped.iter().sum();
        if sum > 0.0 {
            return clipped.into_iter().map(|v| v * total / sum).collect();
        }
    }
    vec![1.0; n]
}

/// Solves the equality-constrained subproblem on `free`, returning the
/// minimizer restricted to those indices.
fn solve_subproblem(q: &Matrix, c: &Vector, free: &[usize], total: f64) -> Result<Vec<f64>> {
    let k = free.len();
    let build = |ridge: f64| {
        let mut kkt = Matrix::zeros(k + 1, k + 1);
        let mut rhs = Vector::zeros(k + 1);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                kkt[(a, b)] = 2.0 * q[(i, j)];
            }
            kkt[(a, a)] += ridge;
            kkt[(a, k)] = 1.0;
            kkt[(k, a)] = 1.0;
            rhs[a] = 2.0 * c[i];
        }
        rhs[k] = total;
        (kkt, rhs)
    };
    let (kkt, rhs) = build(0.0);
    if let Some(x) = kkt.lu().solve(&rhs) {
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x.iter().take(k).copied().collect());
        }
    }
    let trace: f64 = free.iter().map(|&i| q[(i, i)]).sum();
    let ridge = 1e-12 * (trace / k as f64).max(1.0);
    let (kkt, rhs) = build(ridge);
    let x = kkt
        .lu()
        .solve(&rhs)
        .ok_or(Error::Singular("active-set KKT system"))?;
    Ok(x.iter().take(k).copied().collect())
}

/// Minimizes `W^T Q W - 2 c^T W` subject to `W >= 0`, `sum W = n`.
pub fn solve_qp(q: &Matrix, c: &Vector, opts: &QpOptions) -> Result<QpSolution> {
    let n = c.len();
    if q.nrows() != n || q.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: q.nrows(),
        });
    }
    if n == 0 {
        return Err(Error::InvalidInput("empty QP".into()));
    }
    let total = n as f64;
    let max_iters = opts.max_iters.unwrap_or(10 * n + 100);
    // Multipliers above this are treated as nonnegative; keeps the method from
    // freeing a bound on rounding noise and immediately re-blocking it.
    let release_tol = 1e-3 * opts.tol;

    let mut w = feasible_start(opts.warm_start.as_deref(), n);
    let mut free: Vec<bool> = w.iter().map(|&v| v > 0.0).collect();
    let mut iterations = 0;

    let finish = |w: Vec<f64>, iterations: usize| -> Result<QpSolution> {
        let duals = Duals::estimate(&w, q, c);
        let kkt = kkt_residual(&w, &duals, q, c);
        if kkt <= opts.tol {
            Ok(QpSolution {
                w,
                duals,
                kkt_residual: kkt,
                iterations,
            })
        } else {
            Err(Error::NotConverged {
                iterations,
                residual: kkt,
                best: w,
            })
        }
    };

    while iterations < max_iters {
        iterations += 1;
        let free_idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        let x = solve_subproblem(q, c, &free_idx, total)?;

        let negative = x.iter().any(|&v| v < 0.0);
        if !negative {
            for (a, &i) in free_idx.iter().enumerate() {
                w[i] = x[a];
            }
            for i in 0..n {
                if !free[i] {
                    w[i] = 0.0;
                }
            }
            let g = gradient(q, c, &w);
            let nu = free_idx.iter().map(|&i| g[i]).sum::<f64>() / free_idx.len() as f64;
            let mut most_negative = None;
            let mut worst = -release_tol;
            for i in 0..n {
                if !free[i] {
                    let lam = g[i] - nu;
                    if lam < worst {
                        worst = lam;
                        most_negative = Some(i);
                    }
                }
            }
            match most_negative {
                Some(i) => free[i] = true,
                None => return finish(w, iterations),
            }
        } else {
            // Step toward x until the first free weight hits zero.
            let mut alpha = 1.0;
            let mut block = None;
            for (a, &i) in free_idx.iter().enumerate() {
                if x[a] < 0.0 {
                    // x[a] < 0 <= w[i], so the ratio is below one.
                    let ratio = w[i] / (w[i] - x[a]);
                    if ratio < alpha {
                        alpha = ratio;
                        block = Some(i);
                    }
                }
            }
            for (a, &i) in free_idx.iter().enumerate() {
                w[i] += alpha * (x[a] - w[i]);
            }
            if let Some(j) = block {
                w[j] = 0.0;
                free[j] = false;
            }
            for &i in &free_idx {
                if w[i] <= 0.0 {
                    w[i] = 0.0;
                    free[i] = false;
                }
            }
            if !free.iter().any(|&f| f) {
                // Degenerate: keep the unit with the smallest gradient.
                let g = gradient(q, c, &w);
                let best = (0..n)
                    .min_by(|&a, &b| g[a].total_cmp(&g[b]))
                    .unwrap_or(0);
                free[best] = true;
            }
        }
    }
    let duals = Duals::estimate(&w, q, c);
    let residual = kkt_residual(&w, &duals, q, c);
    Err(Error::NotConverged {
        iterations,
        residual,
        best: w,
    })
}
