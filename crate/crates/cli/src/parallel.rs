//! Thread-pool drivers for the replication harnesses. Each replication owns
//! its RNG stream, so the results match the sequential runners exactly.

use balpol_core::learner::{learn_with, run_restart, select_best, LearnOutcome, PolicyObjective};
use balpol_core::simulation::{
    EvaluationBenchReport, EvaluationBenchmark, EvaluationHarness, LearningBenchReport, LearningBenchmark,
    LearningHarness, RateExperiment, RateHarness, RateReport,
};
use balpol_core::{LearnerConfig, Result};
use rayon::prelude::*;

pub fn evaluation_benchmark(cfg: &EvaluationBenchmark, seed: u64) -> Result<EvaluationBenchReport> {
    let h = EvaluationHarness::prepare(cfg, seed)?;
    let samples = (0..cfg.reps).into_par_iter().map(|r| h.replicate(r)).collect::<Result<Vec<_>>>()?;
    Ok(h.aggregate(&samples))
}

pub fn learning_benchmark(cfg: &LearningBenchmark, seed: u64) -> Result<LearningBenchReport> {
    let h = LearningHarness::new(cfg, seed)?;
    let preps = (0..cfg.draws).into_par_iter().map(|d| h.prepare(d)).collect::<Result<Vec<_>>>()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.draws)
        .flat_map(|d| (0..cfg.learners.len()).map(move |k| (d, k)))
        .collect();
    let samples = jobs
        .into_par_iter()
        .map(|(d, k)| h.run(d, &preps[d], cfg.learners[k]))
        .collect::<Result<Vec<_>>>()?;
    Ok(h.aggregate(samples))
}

pub fn rate_experiment(cfg: &RateExperiment, seed: u64) -> Result<RateReport> {
    let h = RateHarness::new(cfg, seed)?;
    let errors = (0..cfg.grid.len())
        .map(|g| (0..cfg.reps).into_par_iter().map(|r| h.replicate(g, r)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(h.aggregate(&errors))
}

/// Restarts in parallel; identical to [`learn_with`] in output.
pub fn learn_parallel<O>(objective: &O, m: usize, d: usize, lcfg: &LearnerConfig) -> Result<LearnOutcome>
where
    O: PolicyObjective + Clone + Send + Sync,
{
    lcfg.validate()?;
    if lcfg.restarts <= 1 {
        return learn_with(objective, m, d, lcfg);
    }
    let runs = (0..lcfg.restarts)
        .into_par_iter()
        .map(|r| run_restart(&mut objective.clone(), m, d, lcfg, r))
        .collect();
    select_best(runs)
}
