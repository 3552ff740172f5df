use balpol_core::estimators::{evaluate_balanced, EvaluationReport, WeightScheme, DEFAULT_CLIP};
use balpol_core::Matrix;
use serde_json::{json, Value};

use super::{outcome_predictions, propensities, Context};
use crate::args::{EvalMethodArg, EvaluateArgs};
use crate::config::OutcomeModel;
use crate::error::{CliError, CliResult};
use crate::io::{create, read_dataset, write_matrix};
use crate::SCHEMA_VERSION;

fn uses_propensities(m: EvalMethodArg) -> bool {
    use EvalMethodArg::*;
    matches!(m, Ipw | Nipw | Cipw | Ncipw | Dr)
}

fn uses_outcomes(m: EvalMethodArg) -> bool {
    use EvalMethodArg::*;
    matches!(m, BalancedDr | Dr | Direct)
}

fn method_name(m: EvalMethodArg) -> &'static str {
    use EvalMethodArg::*;
    match m {
        Balanced => "balanced",
        BalancedDr => "balanced-dr",
        Ipw => "ipw",
        Nipw => "nipw",
        Cipw => "cipw",
        Ncipw => "ncipw",
        Dr => "dr",
        Direct => "direct",
    }
}

fn check_flags(a: &EvaluateArgs, outcome_model: OutcomeModel) -> CliResult<()> {
    let name = method_name(a.method);
    if a.clip.is_some() && !matches!(a.method, EvalMethodArg::Cipw | EvalMethodArg::Ncipw) {
        return Err(CliError::Usage(format!("--clip applies to cipw and ncipw, not {name}")));
    }
    if let Some(c) = a.clip {
        if !(c > 0.0 && c <= 1.0) {
            return Err(CliError::Usage(format!("--clip must lie in (0, 1], got {c}")));
        }
    }
    if a.propensity.is_some() && !uses_propensities(a.method) {
        return Err(CliError::Usage(format!("--propensity is not used by {name}")));
    }
    if a.outcome_model.is_some() && !uses_outcomes(a.method) {
        return Err(CliError::Usage(format!("--outcome-model is not used by {name}")));
    }
    if uses_outcomes(a.method) && outcome_model == OutcomeModel::None {
        return Err(CliError::Usage(format!("{name} needs an outcome model")));
    }
    Ok(())
}

pub fn run(ctx: &Context, a: &EvaluateArgs) -> CliResult<()> {
    let outcome_model = a.outcome_model.unwrap_or(ctx.cfg.outcome.model);
    check_flags(a, outcome_model)?;
    let ds = read_dataset(&a.data, a.arms, ctx.maximize)?;
    let p = a.policy.assignment(&ds.x, ds.m)?;
    let clip = a.clip.unwrap_or(DEFAULT_CLIP);

    let (phi, phi_source) = if uses_propensities(a.method) {
        let (m, s) = propensities(ctx, &ds, a.propensity.as_ref())?;
        (Some(m), Some(s))
    } else {
        (None, None)
    };
    let (mu_hat, crossfitted) = if uses_outcomes(a.method) {
        let (m, c) = outcome_predictions(ctx, &ds, a.no_crossfit)?;
        (Some(m), Some(c))
    } else {
        (None, None)
    };

    let report = match a.method {
        EvalMethodArg::Balanced | EvalMethodArg::BalancedDr => evaluate_balanced(
            &ds,
            &p,
            &ctx.cfg.balance_config()?,
            mu_hat.as_ref(),
            &ctx.cfg.qp_options(),
        )?,
        EvalMethodArg::Direct => EvaluationReport::direct(&p, mu_hat.as_ref().expect("outcome model fitted")),
        m => {
            let scheme = match m {
                EvalMethodArg::Ipw | EvalMethodArg::Dr => WeightScheme::Ipw,
                EvalMethodArg::Nipw => WeightScheme::Nipw,
                EvalMethodArg::Cipw => WeightScheme::Cipw(clip),
                _ => WeightScheme::Ncipw(clip),
            };
            let phi = phi.as_ref().expect("propensities fitted");
            let w = scheme
                .propensity_weights(&p, &ds.t, phi)
                .expect("propensity scheme")?;
            EvaluationReport::weighted(method_name(m), &ds, &p, w, mu_hat.as_ref())
        }
    };

    if let Some(path) = &a.weights {
        let w = report
            .weights
            .as_ref()
            .ok_or_else(|| CliError::Usage("--weights needs a weighting method".into()))?;
        write_matrix(create(path)?, &["w".to_string()], &Matrix::from_column_slice(w.len(), 1, w))?;
    }

    let sign = if ctx.maximize { -1.0 } else { 1.0 };
    let mut diagnostics = serde_json::Map::new();
    if let Some(parts) = &report.objective_parts {
        diagnostics.insert("objective".into(), json!(parts.objective));
        diagnostics.insert("imbalance_per_arm".into(), json!(parts.imbalance_per_arm));
        diagnostics.insert("variance_term".into(), json!(parts.variance_term));
        diagnostics.insert("kkt_residual".into(), json!(parts.kkt_residual));
        diagnostics.insert("iterations".into(), json!(parts.iterations));
    }
    if let Some(w) = &report.weights {
        let max = w.iter().copied().fold(0.0, f64::max);
        diagnostics.insert("weight_sum".into(), json!(w.iter().sum::<f64>()));
        diagnostics.insert("max_weight".into(), json!(max));
    }
    if let Some(phi) = &phi {
        let min = (0..ds.n()).map(|i| phi[(i, ds.t[i])]).fold(f64::INFINITY, f64::min);
        diagnostics.insert("min_observed_propensity".into(), json!(min));
    }

    let v = json!({
        "schema_version": SCHEMA_VERSION,
        "command": "evaluate",
        "method": method_name(a.method),
        "estimate": sign * report.estimate,
        "maximize": ctx.maximize,
        "support": report.weights_support,
        "n": ds.n(),
        "arms": ds.m,
        "dr_used": report.dr_used,
        "clip": if matches!(a.method, EvalMethodArg::Cipw | EvalMethodArg::Ncipw) { json!(clip) } else { Value::Null },
        "propensity": phi_source,
        "outcome_model": mu_hat.as_ref().map(|_| "kernel-ridge"),
        "crossfit": crossfitted,
        "seed": ctx.seed,
        "diagnostics": diagnostics,
    });
    ctx.emit_json(&v)
}
