//! Five-arm Gaussian mixture with a ring of outcome centers.
//!
//! `X | T ~ N(c_T, I)` with arm 1 centered at the origin and the rest evenly
//! spaced on the unit circle. Outcomes are `mu_t(x) = exp(1 - 1/|x - o_t|)`,
//! where the outcome centers `o_t` sit on the circle of radius `1/sqrt 2`,
//! rotating the other way.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{PI, SQRT_2};

use num_traits::Float;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::sample_dataset;
use crate::data::{LoggedDataset, TrueEnvironment};
use crate::learner::policy::softmax_in_place;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example1Spec {
    pub m: usize,
    pub n: usize,
    /// Noise standard deviation.
    pub sigma: f64,
    pub seed: u64,
}

impl Default for Example1Spec {
    fn default() -> Self {
        Self {
            m: 5,
            n: 100,
            sigma: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example1Env {
    pub sigma: f64,
    pub arm_centers: Vec<[f64; 2]>,
    pub outcome_centers: Vec<[f64; 2]>,
}

impl Example1Env {
    pub fn new(m: usize, sigma: f64) -> Self {
        let arm_centers = (0..m)
            .map(|a| {
                if a == 0 {
                    [0.0, 0.0]
                } else {
                    let th = 2.0 * PI * (a - 1) as f64 / (m - 1) as f64;
                    [th.cos(), th.sin()]
                }
            })
            .collect();
        let outcome_centers = (0..m)
            .map(|a| {
                let th = -2.0 * PI * (a + 1) as f64 / m as f64;
                [th.cos() / SQRT_2, th.sin() / SQRT_2]
            })
            .collect();
        Self {
            sigma,
            arm_centers,
            outcome_centers,
        }
    }

    /// `exp(1 - 1/r)` with value 0 at `r = 0`.
    pub fn outcome_at_distance(r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else {
            (1.0 - 1.0 / r).exp()
        }
    }
}

fn dist(a: &[f64], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

impl TrueEnvironment for Example1Env {
    fn n_arms(&self) -> usize {
        self.arm_centers.len()
    }

    fn dim(&self) -> usize {
        2
    }

    fn mean_outcomes(&self, x: &[f64]) -> Vec<f64> {
        self.outcome_centers
            .iter()
            .map(|c| Self::outcome_at_distance(dist(x, c)))
            .collect()
    }

    /// Bayes rule over the equal-weight mixture.
    fn propensities(&self, x: &[f64]) -> Vec<f64> {
        let mut logp: Vec<f64> = self.arm_centers.iter().map(|c| -0.5 * dist(x, c).powi(2)).collect();
        softmax_in_place(&mut logp);
        logp
    }

    fn noise_sd(&self) -> f64 {
        self.sigma
    }

    fn sample_unit(&self, rng: &mut dyn RngCore) -> (Vec<f64>, usize) {
        let t = rng.random_range(0..self.n_arms());
        let c = self.arm_centers[t];
        let z0: f64 = StandardNormal.sample(rng);
        let z1: f64 = StandardNormal.sample(rng);
        (vec![c[0] + z0, c[1] + z1], t)
    }
}

/// One seeded draw of the logged data with its environment.
pub fn gen_example1(spec: &Example1Spec) -> (LoggedDataset, Example1Env) {
    let env = Example1Env::new(spec.m, spec.sigma);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (sample_dataset(&env, spec.n, &mut rng), env)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_outcomes_are_exact() {
        let (ds, env) = gen_example1(&Example1Spec {
            sigma: 0.0,
            ..Example1Spec::default()
        });
        for i in 0..ds.n() {
            assert_eq!(ds.y[i], env.mean_outcomes(&ds.row(i))[ds.t[i]]);
        }
    }

    #[test]
    fn noise_level_only_changes_outcomes() {
        let a = gen_example1(&Example1Spec { sigma: 0.0, ..Example1Spec::default() }).0;
        let b = gen_example1(&Example1Spec::default()).0;
        assert_eq!(a.x, b.x);
        assert_eq!(a.t, b.t);
        assert_ne!(a.y, b.y);
    }

    #[test]
    fn unit_distance_outcome_is_one() {
        let env = Example1Env::new(5, 1.0);
        for (t, c) in env.outcome_centers.iter().enumerate() {
            let x = [c[0] + 0.6, c[1] - 0.8];
            assert!((env.mean_outcomes(&x)[t] - 1.0).abs() < 1e-15);
            assert_eq!(env.mean_outcomes(c)[t], 0.0);
        }
    }

    #[test]
    fn geometry() {
        let env = Example1Env::new(5, 1.0);
        assert_eq!(env.arm_centers[0], [0.0, 0.0]);
        assert!((env.arm_centers[1][0] - 1.0).abs() < 1e-15);
        assert!((env.arm_centers[2][1] - 1.0).abs() < 1e-15);
        // o_1 at angle -2 pi / 5
        let th = -2.0 * PI / 5.0;
        assert!((env.outcome_centers[0][0] - th.cos() / SQRT_2).abs() < 1e-15);
        assert!((env.outcome_centers[4][0] - 1.0 / SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn arm_frequencies_concentrate() {
        let n = 20000;
        let (ds, _) = gen_example1(&Example1Spec { n, seed: 3, ..Example1Spec::default() });
        let tol = 3.0 * (0.2f64 * 0.8 / n as f64).sqrt();
        for c in ds.arm_counts() {
            assert!((c as f64 / n as f64 - 0.2).abs() < tol);
        }
    }

    #[test]
    fn same_seed_same_data() {
        let spec = Example1Spec { seed: 11, ..Example1Spec::default() };
        assert_eq!(gen_example1(&spec).0, gen_example1(&spec).0);
    }
}
