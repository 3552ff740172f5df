//! Ground truth: the argmin-outcome policy, sample and population policy
//! values, and regret.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Policy, PolicyAssignment, TrueEnvironment};
use crate::learner::argmin;
use crate::Matrix;

/// Deterministic policy choosing the arm with the smallest true mean
/// outcome, ties to the lowest index.
pub struct OptimalPolicy<'a, E: TrueEnvironment + ?Sized> {
    pub env: &'a E,
}

impl<E: TrueEnvironment + ?Sized> Policy for OptimalPolicy<'_, E> {
    fn n_arms(&self) -> usize {
        self.env.n_arms()
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.env.n_arms()];
        p[argmin(&self.env.mean_outcomes(x))] = 1.0;
        p
    }
}

pub fn optimal_policy<E: TrueEnvironment + ?Sized>(env: &E) -> OptimalPolicy<'_, E> {
    OptimalPolicy { env }
}

/// `(1/n) sum_i sum_t P[i][t] mu[i][t]`.
pub fn sape(p: &PolicyAssignment, mu: &Matrix) -> f64 {
    p.matrix().component_mul(mu).sum() / p.n() as f64
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
}

impl MonteCarloEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            mean,
            std_error: (var / n as f64).sqrt(),
            n,
        }
    }
}

fn policy_value(policy: &(impl Policy + ?Sized), mu: &[f64], x: &[f64]) -> f64 {
    policy.probabilities(x).iter().zip(mu).map(|(p, m)| p * m).sum()
}

/// Population value of `policy`, by averaging over `n` fresh covariate draws.
pub fn pape_estimate<P, E>(policy: &P, env: &E, n: usize, seed: u64) -> MonteCarloEstimate
where
    P: Policy + ?Sized,
    E: TrueEnvironment + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..n.max(1))
        .map(|_| {
            let (x, _) = env.sample_unit(&mut rng);
            policy_value(policy, &env.mean_outcomes(&x), &x)
        })
        .collect();
    MonteCarloEstimate::from_samples(&vals)
}

/// Population value of `policy` minus that of the optimal policy, on common
/// covariate draws.
pub fn regret<P, E>(policy: &P, env: &E, n: usize, seed: u64) -> MonteCarloEstimate
where
    P: Policy + ?Sized,
    E: TrueEnvironment + ?Sized,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals: Vec<f64> = (0..n.max(1))
        .map(|_| {
            let (x, _) = env.sample_unit(&mut rng);
            let mu = env.mean_outcomes(&x);
            let best = mu.iter().copied().fold(f64::INFINITY, f64::min);
            policy_value(policy, &mu, &x) - best
        })
        .collect();
    MonteCarloEstimate::from_samples(&vals)
}

/// Most probable arm on a regular 2-d grid, as `(x1, x2, arm)` rows.
pub fn policy_grid<P: Policy + ?Sized>(policy: &P, lo: [f64; 2], hi: [f64; 2], steps: usize) -> Vec<(f64, f64, usize)> {
    let steps = steps.max(2);
    let mut out = Vec::with_capacity(steps * steps);
    for a in 0..steps {
        for b in 0..steps {
            let x1 = lo[0] + (hi[0] - lo[0]) * a as f64 / (steps - 1) as f64;
            let x2 = lo[1] + (hi[1] - lo[1]) * b as f64 / (steps - 1) as f64;
            let p = policy.probabilities(&[x1, x2]);
            let neg: Vec<f64> = p.iter().map(|v| -v).collect();
            out.push((x1, x2, argmin(&neg)));
        }
    }
    out
}
