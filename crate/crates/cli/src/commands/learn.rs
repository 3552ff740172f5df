use balpol_core::learner::{BalancedObjective, LearnOutcome, PlugInObjective};
use balpol_core::simulation::{policy_grid, regret};
use serde_json::{json, Value};

use super::{outcome_predictions, propensities, Context};
use crate::args::{LearnArgs, LearnMethodArg};
use crate::error::{CliError, CliResult};
use crate::io::{create, csv_err, read_dataset};
use crate::parallel::learn_parallel;
use crate::policy_spec::beta_rows;
use crate::truth::Environment;
use crate::SCHEMA_VERSION;

/// Half-width of the square covered by `--regions`.
const REGION_EXTENT: f64 = 3.0;
const REGION_STEPS: usize = 61;

fn method_name(m: LearnMethodArg) -> &'static str {
    match m {
        LearnMethodArg::Balanced => "balanced",
        LearnMethodArg::BalancedDr => "balanced-dr",
        LearnMethodArg::IpwLogit => "ipw-logit",
        LearnMethodArg::DrLogit => "dr-logit",
    }
}

pub fn run(ctx: &Context, a: &LearnArgs) -> CliResult<()> {
    let balanced = matches!(a.method, LearnMethodArg::Balanced | LearnMethodArg::BalancedDr);
    if balanced && a.propensity.is_some() {
        return Err(CliError::Usage(format!("--propensity is not used by {}", method_name(a.method))));
    }
    if a.eval_against.is_some() && ctx.maximize {
        return Err(CliError::Usage("--eval-against scores costs and cannot be combined with --maximize".into()));
    }
    let env = a.eval_against.as_deref().map(Environment::load).transpose()?;

    let ds = read_dataset(&a.data, a.arms, ctx.maximize)?;
    if a.regions.is_some() && ds.d() != 2 {
        return Err(CliError::Usage("--regions needs exactly two covariates".into()));
    }
    let mut lcfg = ctx.cfg.learner_config(ctx.seed);
    if let Some(r) = a.restarts {
        lcfg.restarts = r;
    }
    if let Some(l) = a.lambda {
        lcfg.lambda_reg = l;
    }
    if let Some(k) = a.max_iters {
        lcfg.max_iters = k;
    }
    if lcfg.restarts == 0 {
        return Err(CliError::Usage("--restarts must be at least 1".into()));
    }

    let (m, d) = (ds.m, ds.d());
    let out: LearnOutcome = match a.method {
        LearnMethodArg::Balanced => {
            let obj = BalancedObjective::new(&ds, &ctx.cfg.balance_config()?, lcfg.lambda_reg, None, lcfg.qp_tol)?;
            learn_parallel(&obj, m, d, &lcfg)?
        }
        LearnMethodArg::BalancedDr => {
            let (mu, _) = outcome_predictions(ctx, &ds, a.no_crossfit)?;
            let obj =
                BalancedObjective::new(&ds, &ctx.cfg.balance_config()?, lcfg.lambda_reg, Some(&mu), lcfg.qp_tol)?;
            learn_parallel(&obj, m, d, &lcfg)?
        }
        LearnMethodArg::IpwLogit => {
            let (phi, _) = propensities(ctx, &ds, a.propensity.as_ref())?;
            learn_parallel(&PlugInObjective::ipw(&ds, &phi)?, m, d, &lcfg)?
        }
        LearnMethodArg::DrLogit => {
            let (phi, _) = propensities(ctx, &ds, a.propensity.as_ref())?;
            let (mu, _) = outcome_predictions(ctx, &ds, a.no_crossfit)?;
            learn_parallel(&PlugInObjective::dr(&ds, &phi, &mu)?, m, d, &lcfg)?
        }
    };

    if let Some(path) = &a.trace {
        let best = out.best;
        let mut wtr = csv::Writer::from_writer(create(path)?);
        wtr.write_record(["restart", "iteration", "objective", "grad_norm", "support"])
            .map_err(csv_err)?;
        for s in out.trace.iter().filter(|s| s.iteration > 0) {
            wtr.write_record([
                best.to_string(),
                s.iteration.to_string(),
                s.objective.to_string(),
                s.grad_norm.to_string(),
                s.aux.map_or(String::new(), |v| v.to_string()),
            ])
            .map_err(csv_err)?;
        }
        wtr.flush()?;
    }

    if let Some(path) = &a.regions {
        let mut wtr = csv::Writer::from_writer(create(path)?);
        wtr.write_record(["x1", "x2", "arm"]).map_err(csv_err)?;
        let lo = [-REGION_EXTENT; 2];
        let hi = [REGION_EXTENT; 2];
        for (x1, x2, arm) in policy_grid(&out.policy, lo, hi, REGION_STEPS) {
            wtr.write_record([x1.to_string(), x2.to_string(), (arm + 1).to_string()])
                .map_err(csv_err)?;
        }
        wtr.flush()?;
    }

    let regret_value = match env {
        Some(env) => {
            let built = env.build()?;
            if built.n_arms() != m || built.dim() != d {
                return Err(CliError::Data(format!(
                    "environment has {} arms and {} covariates, data has {m} and {d}",
                    built.n_arms(),
                    built.dim()
                )));
            }
            let r = regret(&out.policy, built.as_ref(), a.regret_samples, ctx.seed);
            json!({ "mean": r.mean, "std_error": r.std_error, "samples": r.n })
        }
        None => Value::Null,
    };

    let restarts: Vec<Value> = out
        .restarts
        .iter()
        .map(|r| {
            json!({
                "index": r.index,
                "objective": r.objective,
                "converged": r.converged,
                "iterations": r.trace.last().map_or(0, |s| s.iteration),
            })
        })
        .collect();
    let v = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "learn",
        "method": method_name(a.method),
        "maximize": ctx.maximize,
        "seed": ctx.seed,
        "n": ds.n(),
        "arms": m,
        "policy": { "kind": "logit", "beta": beta_rows(&out.policy) },
        "objective": out.objective,
        "best_restart": out.best,
        "iterations": out.trace.last().map_or(0, |s| s.iteration),
        "restarts": restarts,
        "regret": regret_value,
    });
    ctx.emit_json(&v)
}
