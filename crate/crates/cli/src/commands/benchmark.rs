use balpol_core::simulation::{EvaluationBenchmark, LearningBenchmark, RateExperiment};
use balpol_core::BalanceConfig;
use serde_json::{json, Value};

use super::Context;
use crate::args::{BenchMode, BenchmarkArgs};
use crate::error::{CliError, CliResult};
use crate::io::{create, csv_err};
use crate::parallel;
use crate::SCHEMA_VERSION;

/// Each study keeps its own balance defaults; only keys the config file
/// names explicitly replace them.
fn override_balance(ctx: &Context, base: BalanceConfig) -> CliResult<BalanceConfig> {
    let cfg = &ctx.cfg;
    let given = cfg.balance_config()?;
    let mut out = base;
    if cfg.is_set("balance.gamma") {
        out.gammas = given.gammas;
    }
    if cfg.is_set("balance.lambda") {
        out.lambda = given.lambda;
    }
    if cfg.is_set("balance.imbalance") {
        out.imbalance = given.imbalance;
    }
    if cfg.is_set("kernel.bandwidth") || cfg.is_set("kernel.scale") {
        out = out.with_kernel(cfg.kernel_spec()?);
    }
    Ok(out)
}

fn check_positive(name: &str, v: Option<usize>) -> CliResult<()> {
    match v {
        Some(0) => Err(CliError::Usage(format!("--{name} must be positive"))),
        _ => Ok(()),
    }
}

fn check_sigma(sigma: Option<f64>) -> CliResult<()> {
    match sigma {
        Some(s) if !(s >= 0.0 && s.is_finite()) => {
            Err(CliError::Usage("--sigma must be a nonnegative number".into()))
        }
        _ => Ok(()),
    }
}

fn reject(flag: &str, mode: &str, present: bool) -> CliResult<()> {
    if present {
        return Err(CliError::Usage(format!("--{flag} does not apply to {mode} mode")));
    }
    Ok(())
}

pub fn run(ctx: &Context, a: &BenchmarkArgs) -> CliResult<()> {
    check_positive("reps", a.reps)?;
    check_positive("draws", a.draws)?;
    check_positive("n", a.n)?;
    check_sigma(a.sigma)?;
    let report = match a.mode {
        BenchMode::Evaluation => {
            reject("draws", "evaluation", a.draws.is_some())?;
            reject("grid", "evaluation", a.grid.is_some())?;
            evaluation(ctx, a)?
        }
        BenchMode::Learning => {
            reject("reps", "learning", a.reps.is_some())?;
            reject("grid", "learning", a.grid.is_some())?;
            learning(ctx, a)?
        }
        BenchMode::Rate => {
            reject("draws", "rate", a.draws.is_some())?;
            reject("n", "rate", a.n.is_some())?;
            rate(ctx, a)?
        }
    };
    ctx.emit_json(&report)
}

fn evaluation(ctx: &Context, a: &BenchmarkArgs) -> CliResult<Value> {
    let mut b = EvaluationBenchmark::default();
    b.reps = a.reps.unwrap_or(b.reps);
    b.spec.n = a.n.unwrap_or(b.spec.n);
    b.spec.sigma = a.sigma.unwrap_or(b.spec.sigma);
    b.spec.seed = ctx.seed;
    b.balance = override_balance(ctx, b.balance)?;
    if ctx.cfg.is_set("balance.tol") || ctx.cfg.is_set("balance.max_iters") {
        b.qp = ctx.cfg.qp_options();
    }
    if ctx.cfg.is_set("propensity.covariance") {
        b.covariance = ctx.cfg.covariance();
    }
    if ctx.cfg.is_set("crossfit.folds") {
        b.folds = ctx.cfg.crossfit.folds;
    }
    let r = parallel::evaluation_benchmark(&b, ctx.seed)?;

    if let Some(path) = &a.table {
        let mut wtr = csv::Writer::from_writer(create(path)?);
        wtr.write_record([
            "weights",
            "vanilla_rmse",
            "vanilla_bias",
            "vanilla_sd",
            "dr_rmse",
            "dr_bias",
            "dr_sd",
            "support_mean",
            "support_sd",
        ])
        .map_err(csv_err)?;
        for row in &r.rows {
            wtr.write_record([
                row.label.clone(),
                row.vanilla.rmse.to_string(),
                row.vanilla.bias.to_string(),
                row.vanilla.sd.to_string(),
                row.dr.rmse.to_string(),
                row.dr.bias.to_string(),
                row.dr.sd.to_string(),
                row.support_mean.to_string(),
                row.support_sd.to_string(),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
    }

    let rows: Vec<Value> = r
        .rows
        .iter()
        .map(|row| {
            json!({
                "weights": row.label,
                "vanilla": { "rmse": row.vanilla.rmse, "bias": row.vanilla.bias, "sd": row.vanilla.sd },
                "dr": { "rmse": row.dr.rmse, "bias": row.dr.bias, "sd": row.dr.sd },
                "support_mean": row.support_mean,
                "support_sd": row.support_sd,
            })
        })
        .collect();
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "benchmark",
        "mode": "evaluation",
        "seed": r.seed,
        "n": r.n,
        "reps": r.reps,
        "truth": r.truth,
        "rows": rows,
    }))
}

fn learning(ctx: &Context, a: &BenchmarkArgs) -> CliResult<Value> {
    let mut b = LearningBenchmark::default();
    b.draws = a.draws.unwrap_or(b.draws);
    b.spec.n = a.n.unwrap_or(b.spec.n);
    b.spec.sigma = a.sigma.unwrap_or(b.spec.sigma);
    b.spec.seed = ctx.seed;
    b.balance = override_balance(ctx, b.balance)?;
    let lc = ctx.cfg.learner_config(ctx.seed);
    let set = |k: &str| ctx.cfg.is_set(&format!("learner.{k}"));
    if set("lambda") {
        b.learner.lambda_reg = lc.lambda_reg;
    }
    if set("restarts") {
        b.learner.restarts = lc.restarts;
    }
    if set("grad_tol") {
        b.learner.grad_tol = lc.grad_tol;
    }
    if set("max_iters") {
        b.learner.max_iters = lc.max_iters;
    }
    if set("init_scale") {
        b.learner.init_scale = lc.init_scale;
    }
    if set("qp_tol") {
        b.learner.qp_tol = lc.qp_tol;
    }
    b.learner.seed = ctx.seed;
    b.learner.validate()?;
    if ctx.cfg.is_set("propensity.covariance") {
        b.covariance = ctx.cfg.covariance();
    }
    if ctx.cfg.is_set("crossfit.folds") {
        b.folds = ctx.cfg.crossfit.folds;
    }
    let r = parallel::learning_benchmark(&b, ctx.seed)?;

    if let Some(path) = &a.table {
        let mut wtr = csv::Writer::from_writer(create(path)?);
        wtr.write_record(["learner", "mean_regret", "sd_regret"]).map_err(csv_err)?;
        for s in &r.summaries {
            wtr.write_record([s.label.clone(), s.mean_regret.to_string(), s.sd_regret.to_string()])
                .map_err(csv_err)?;
        }
        wtr.flush()?;
    }

    let summaries: Vec<Value> = r
        .summaries
        .iter()
        .map(|s| {
            json!({
                "learner": s.label,
                "mean_regret": s.mean_regret,
                "sd_regret": s.sd_regret,
                "regrets": s.regrets,
            })
        })
        .collect();
    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "benchmark",
        "mode": "learning",
        "seed": r.seed,
        "n": b.spec.n,
        "draws": r.draws,
        "restarts": b.learner.restarts,
        "learners": summaries,
    }))
}

fn rate(ctx: &Context, a: &BenchmarkArgs) -> CliResult<Value> {
    let mut b = RateExperiment::default();
    if let Some(g) = &a.grid {
        if g.len() < 2 || g.contains(&0) {
            return Err(CliError::Usage("--grid needs at least two positive sample sizes".into()));
        }
        b.grid = g.clone();
    }
    b.reps = a.reps.unwrap_or(b.reps);
    b.sigma = a.sigma.unwrap_or(b.sigma);
    if ctx.cfg.is_set("kernel.bandwidth") {
        b.bandwidth = ctx.cfg.kernel.bandwidth;
    }
    if ctx.cfg.is_set("balance.tol") || ctx.cfg.is_set("balance.max_iters") {
        b.qp = ctx.cfg.qp_options();
    }
    let r = parallel::rate_experiment(&b, ctx.seed)?;

    if let Some(path) = &a.table {
        let mut wtr = csv::Writer::from_writer(create(path)?);
        wtr.write_record(["n", "balanced_rmse", "ipw_rmse"]).map_err(csv_err)?;
        for (i, n) in r.grid.iter().enumerate() {
            wtr.write_record([n.to_string(), r.balanced_rmse[i].to_string(), r.ipw_rmse[i].to_string()])
                .map_err(csv_err)?;
        }
        wtr.flush()?;
    }

    Ok(json!({
        "schema_version": SCHEMA_VERSION,
        "command": "benchmark",
        "mode": "rate",
        "seed": r.seed,
        "reps": r.reps,
        "grid": r.grid,
        "balanced_rmse": r.balanced_rmse,
        "ipw_rmse": r.ipw_rmse,
        "balanced_slope": { "estimate": r.balanced_slope, "std_error": r.balanced_slope_se },
        "ipw_slope": { "estimate": r.ipw_slope, "std_error": r.ipw_slope_se },
    }))
}

