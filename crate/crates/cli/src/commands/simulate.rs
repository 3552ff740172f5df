use balpol_core::simulation::{gen_example1, sample_dataset, stream, Example1Spec, FiniteExpansionEnv};

use super::Context;
use crate::args::{ExampleArg, SimulateArgs};
use crate::error::{CliError, CliResult};
use crate::io::{create, write_dataset};
use crate::truth::Environment;

/// Bumps in a random expansion environment.
const EXPANSION_CENTERS: usize = 8;

pub fn run(ctx: &Context, a: &SimulateArgs) -> CliResult<()> {
    if a.n == 0 {
        return Err(CliError::Usage("--n must be positive".into()));
    }
    if a.arms < 2 {
        return Err(CliError::Usage("--arms must be at least 2".into()));
    }
    if !(a.sigma.is_finite() && a.sigma >= 0.0) {
        return Err(CliError::Usage("--sigma must be a nonnegative number".into()));
    }
    let (ds, env) = match a.example {
        ExampleArg::Mixture => {
            let spec = Example1Spec {
                m: a.arms,
                n: a.n,
                sigma: a.sigma,
                seed: ctx.seed,
            };
            let (ds, _) = gen_example1(&spec);
            (ds, Environment::Mixture { arms: a.arms, sigma: a.sigma })
        }
        ExampleArg::Expansion => {
            let bandwidth = ctx.cfg.kernel.bandwidth;
            let env = FiniteExpansionEnv::random(a.arms, a.sigma, bandwidth, EXPANSION_CENTERS, &mut stream(ctx.seed, 0));
            let ds = sample_dataset(&env, a.n, &mut stream(ctx.seed, 1));
            (ds, Environment::from_expansion(&env))
        }
    };
    if let Some(path) = &a.truth {
        env.save(path)?;
    }
    let ds = if ctx.maximize { ds.negated() } else { ds };
    match ctx.output() {
        Some(path) => write_dataset(create(path)?, &ds),
        None => write_dataset(std::io::stdout().lock(), &ds),
    }
}
