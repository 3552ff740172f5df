pub mod benchmark;
pub mod evaluate;
pub mod learn;
pub mod simulate;
pub mod tune;

use std::path::{Path, PathBuf};

use balpol_core::models::{crossfit, fit_gaussian_discriminant, fit_kernel_ridge_per_arm, fit_multinomial_logit};
use balpol_core::{LoggedDataset, Matrix};
use serde_json::Value;

use crate::args::PropensityArg;
use crate::config::{PropensityKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::io::{emit, read_matrix_csv};

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct Context {
    pub cfg: RunConfig,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub maximize: bool,
}

impl Context {
    pub fn output(&self) -> Option<&Path> {
        self.output.as_deref()
    }

    /// Pretty JSON with a trailing newline to `--output` or stdout.
    pub fn emit_json(&self, v: &Value) -> CliResult<()> {
        emit(self.output(), &(serde_json::to_string_pretty(v)? + "\n"))
    }
}

/// Propensity matrix at the sample and a short description of its source.
pub fn propensities(ctx: &Context, ds: &LoggedDataset, arg: Option<&PropensityArg>) -> CliResult<(Matrix, String)> {
    let arg = arg.cloned().unwrap_or(match ctx.cfg.propensity.kind {
        PropensityKind::Logit => PropensityArg::Logit,
        PropensityKind::Gaussian => PropensityArg::Gaussian,
    });
    match arg {
        PropensityArg::Logit => Ok((fit_multinomial_logit(ds)?.predict_matrix(&ds.x), "logit".into())),
        PropensityArg::Gaussian => Ok((
            fit_gaussian_discriminant(ds, ctx.cfg.covariance())?.predict_matrix(&ds.x),
            "gaussian".into(),
        )),
        PropensityArg::Known(path) => {
            let phi = read_matrix_csv(&path)?;
            if phi.nrows() != ds.n() || phi.ncols() != ds.m {
                return Err(CliError::Data(format!(
                    "{}: propensities are {} x {}, data needs {} x {}",
                    path.display(),
                    phi.nrows(),
                    phi.ncols(),
                    ds.n(),
                    ds.m
                )));
            }
            Ok((phi, "known".into()))
        }
    }
}

/// Outcome predictions at the sample, out of fold unless disabled.
pub fn outcome_predictions(ctx: &Context, ds: &LoggedDataset, no_crossfit: bool) -> CliResult<(Matrix, bool)> {
    let spec = ctx.cfg.outcome_kernel()?;
    let opts = ctx.cfg.ridge();
    if no_crossfit || !ctx.cfg.crossfit.enabled {
        let model = fit_kernel_ridge_per_arm(ds, &spec, opts)?;
        Ok((model.predict_matrix(&ds.x)?, false))
    } else {
        Ok((crossfit(ds, &spec, opts, ctx.cfg.crossfit.folds, ctx.seed)?.mu_hat, true))
    }
}
