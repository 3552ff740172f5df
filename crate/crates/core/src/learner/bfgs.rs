//! BFGS with a strong-Wolfe line search.
//!
//! The line search only ever accepts points satisfying the sufficient
//! decrease condition, so the accepted objective values are nonincreasing
//! even when the objective is only piecewise smooth.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

/// One objective evaluation.
#[derive(Debug, Clone)]
pub struct Eval {
    pub value: f64,
    pub grad: Vec<f64>,
    /// Free-form diagnostic carried into the trace (active-set size for the
    /// balanced learners).
    pub aux: Option<usize>,
}

impl Eval {
    pub fn failed(dim: usize) -> Self {
        Self {
            value: f64::INFINITY,
            grad: vec![0.0; dim],
            aux: None,
        }
    }

    fn is_finite(&self) -> bool {
        self.value.is_finite() && self.grad.iter().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-6,
            max_iters: 200,
        }
    }
}

/// State after an accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    pub objective: f64,
    pub grad_norm: f64,
    pub aux: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub trace: Vec<TraceStep>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 30;

struct LineResult {
    x: Vec<f64>,
    eval: Eval,
}

/// Strong-Wolfe line search (bracketing then zoom). Returns the best
/// sufficient-decrease point seen if the curvature condition is never met.
fn line_search<F: FnMut(&[f64]) -> Eval>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    g0_dir: f64,
    dir: &[f64],
    evals: &mut usize,
) -> Option<LineResult> {
    let mut best: Option<LineResult> = None;
    let mut used = 0;
    let mut probe = |alpha: f64, best: &mut Option<LineResult>, used: &mut usize| -> (Eval, bool) {
        *used += 1;
        *evals += 1;
        let xs: Vec<f64> = x.iter().zip(dir).map(|(xi, di)| xi + alpha * di).collect();
        let e = f(&xs);
        let ok = e.is_finite() && e.value <= f0 + C1 * alpha * g0_dir;
        if ok && best.as_ref().is_none_or(|b| e.value < b.eval.value) {
            *best = Some(LineResult { x: xs, eval: e.clone() });
        }
        (e, ok)
    };

    // Bracketing phase.
    let (mut lo, mut hi, mut f_lo);
    let mut prev = 0.0;
    let mut f_prev = f0;
    let mut alpha = 1.0;
    loop {
        if used >= MAX_LINE_EVALS {
            return best;
        }
        let (e, ok) = probe(alpha, &mut best, &mut used);
        if !ok || (prev > 0.0 && e.value >= f_prev) {
            lo = prev;
            f_lo = f_prev;
            hi = alpha;
            break;
        }
        let gd = dot(&e.grad, dir);
        if gd.abs() <= -C2 * g0_dir {
            return best;
        }
        if gd >= 0.0 {
            lo = alpha;
            f_lo = e.value;
            hi = prev;
            break;
        }
        prev = alpha;
        f_prev = e.value;
        alpha *= 2.0;
        if alpha > 1e8 {
            return best;
        }
    }

    // Zoom phase.
    while used < MAX_LINE_EVALS {
        if (hi - lo).abs() <= 1e-12 * lo.abs().max(1e-3) {
            break;
        }
        let alpha = 0.5 * (lo + hi);
        let (e, ok) = probe(alpha, &mut best, &mut used);
        if !ok || e.value >= f_lo {
            hi = alpha;
        } else {
            let gd = dot(&e.grad, dir);
            if gd.abs() <= -C2 * g0_dir {
                return best;
            }
            if gd * (hi - lo) >= 0.0 {
                hi = lo;
            }
            lo = alpha;
            f_lo = e.value;
        }
    }
    best
}

/// Minimizes `f` from `x0`. `f` returns the value and gradient; an infinite
/// value marks an infeasible point and is never accepted.
pub fn minimize<F: FnMut(&[f64]) -> Eval>(mut f: F, x0: &[f64], opts: &BfgsOptions) -> BfgsResult {
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut cur = f(&x);
    let mut evaluations = 1;
    let mut trace = Vec::new();
    let mut gnorm = norm(&cur.grad);
    trace.push(TraceStep {
        iteration: 0,
        objective: cur.value,
        grad_norm: gnorm,
        aux: cur.aux,
    });
    if !cur.is_finite() {
        return BfgsResult {
            x,
            value: cur.value,
            grad_norm: gnorm,
            iterations: 0,
            evaluations,
            converged: false,
            trace,
        };
    }

    // Inverse Hessian approximation, row-major.
    let identity = |scale: f64| {
        let mut h = vec![0.0; dim * dim];
        for i in 0..dim {
            h[i * dim + i] = scale;
        }
        h
    };
    let mut h_inv = identity(1.0);
    let mut fresh = true;
    let mut iterations = 0;
    let mut converged = gnorm <= opts.grad_tol;

    while !converged && iterations < opts.max_iters {
        let mut dir: Vec<f64> = (0..dim)
            .map(|i| -dot(&h_inv[i * dim..(i + 1) * dim], &cur.grad))
            .collect();
        let mut slope = dot(&dir, &cur.grad);
        if !(slope < 0.0) {
            h_inv = identity(1.0);
            fresh = true;
            dir = cur.grad.iter().map(|g| -g).collect();
            slope = -gnorm * gnorm;
        }
        if fresh {
            // Keep the first trial step at unit length in parameter space.
            let dn = norm(&dir);
            if dn > 1.0 {
                dir.iter_mut().for_each(|d| *d /= dn);
                slope /= dn;
            }
        }
        let step = match line_search(&mut f, &x, cur.value, slope, &dir, &mut evaluations) {
            Some(s) => s,
            None if !fresh => {
                // Retry once along steepest descent with a reset metric.
                h_inv = identity(1.0);
                fresh = true;
                continue;
            }
            None => break,
        };
        iterations += 1;
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.eval.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * norm(&s) * norm(&y) && sy > 0.0 {
            if fresh {
                let yy = dot(&y, &y);
                h_inv = identity(sy / yy);
            }
            // H <- (I - rho s y^T) H (I - rho y s^T) + rho s s^T
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..dim).map(|i| dot(&h_inv[i * dim..(i + 1) * dim], &y)).collect();
            let yhy = dot(&y, &hy);
            for i in 0..dim {
                for j in 0..dim {
                    h_inv[i * dim + j] += -rho * (hy[i] * s[j] + s[i] * hy[j])
                        + (rho * rho * yhy + rho) * s[i] * s[j];
                }
            }
            fresh = false;
        }
        x = step.x;
        cur = step.eval;
        gnorm = norm(&cur.grad);
        trace.push(TraceStep {
            iteration: iterations,
            objective: cur.value,
            grad_norm: gnorm,
            aux: cur.aux,
        });
        converged = gnorm <= opts.grad_tol;
    }

    BfgsResult {
        x,
        value: cur.value,
        grad_norm: gnorm,
        iterations,
        evaluations,
        converged,
        trace,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> Eval {
        let (a, b) = (x[0], x[1]);
        Eval {
            value: (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2),
            grad: vec![
                -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                200.0 * (b - a * a),
            ],
            aux: None,
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let res = minimize(rosenbrock, &[-1.2, 1.0], &BfgsOptions::default());
        assert!(res.converged, "{res:?}");
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn accepted_values_never_increase() {
        let res = minimize(rosenbrock, &[2.0, -1.0], &BfgsOptions::default());
        for w in res.trace.windows(2) {
            assert!(w[1].objective <= w[0].objective);
        }
    }

    #[test]
    fn infeasible_region_is_avoided() {
        // Quadratic with minimum at 3, but infinite beyond 2.
        let f = |x: &[f64]| {
            if x[0] > 2.0 {
                Eval::failed(1)
            } else {
                Eval {
                    value: (x[0] - 3.0).powi(2),
                    grad: vec![2.0 * (x[0] - 3.0)],
                    aux: None,
                }
            }
        };
        let res = minimize(f, &[0.0], &BfgsOptions { grad_tol: 1e-8, max_iters: 50 });
        assert!(res.x[0] <= 2.0 && res.x[0] > 1.5);
        assert!(res.value.is_finite());
    }

    #[test]
    fn max_iters_one_gives_single_step() {
        let res = minimize(rosenbrock, &[-1.2, 1.0], &BfgsOptions { grad_tol: 1e-12, max_iters: 1 });
        assert_eq!(res.iterations, 1);
        assert_eq!(res.trace.len(), 2);
    }
}
