//! Synthetic environments, ground-truth oracles and replication harnesses.

pub mod evaluation;
pub mod example1;
pub mod learning;
pub mod oracle;
pub mod rate;

use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::data::{LoggedDataset, TrueEnvironment};
use crate::Matrix;

pub use evaluation::{
    run_evaluation_benchmark, stream, ErrorStats, EvalMethod, EvaluationBenchReport, EvaluationBenchmark, EvaluationHarness,
    MethodRow, MethodSample,
};
pub use example1::{gen_example1, Example1Env, Example1Spec};
pub use learning::{
    run_learning_benchmark, LearnerKind, LearnerSummary, LearningBenchReport, LearningBenchmark, LearningHarness,
    LearningSample, PreparedDraw,
};
pub use oracle::{optimal_policy, pape_estimate, policy_grid, regret, sape, MonteCarloEstimate, OptimalPolicy};
pub use rate::{ols_slope, run_rate_experiment, FiniteExpansionEnv, RateExperiment, RateHarness, RateReport};

/// Draws an index from a probability vector.
pub(crate) fn categorical(p: &[f64], rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (t, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return t;
        }
    }
    p.len() - 1
}

fn outcome<E: TrueEnvironment + ?Sized>(env: &E, x: &[f64], t: usize, rng: &mut dyn RngCore) -> f64 {
    // The noise draw happens even at zero noise so that streams line up
    // across noise levels.
    let z: f64 = StandardNormal.sample(rng);
    env.mean_outcomes(x)[t] + env.noise_sd() * z
}

/// `n` i.i.d. units `(X, T, Y)` from the population.
pub fn sample_dataset<E: TrueEnvironment + ?Sized>(env: &E, n: usize, rng: &mut dyn RngCore) -> LoggedDataset {
    let d = env.dim();
    let mut x = Matrix::zeros(n, d);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let (xi, ti) = env.sample_unit(rng);
        y.push(outcome(env, &xi, ti, rng));
        for (j, v) in xi.iter().enumerate() {
            x[(i, j)] = *v;
        }
        t.push(ti);
    }
    LoggedDataset::new(x, t, y, env.n_arms())
}

/// Fresh `(T, Y)` given fixed covariates, with `T | X` drawn from the
/// logging propensities.
pub fn redraw_given_x<E: TrueEnvironment + ?Sized>(env: &E, x: &Matrix, rng: &mut dyn RngCore) -> LoggedDataset {
    let n = x.nrows();
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        let ti = categorical(&env.propensities(&xi), rng);
        y.push(outcome(env, &xi, ti, rng));
        t.push(ti);
    }
    LoggedDataset::new(x.clone(), t, y, env.n_arms())
}
