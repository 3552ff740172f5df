//! Command line front end: file formats, configuration and the subcommands.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod parallel;
pub mod policy_spec;
pub mod truth;

use args::{Cli, Command};
use commands::Context;
use config::RunConfig;
use error::CliResult;

/// Version stamped into every JSON report and truth file.
pub const SCHEMA_VERSION: u32 = 1;

/// Resolves seed, output and configuration, then runs the subcommand.
pub fn run(cli: Cli) -> CliResult<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let seed = match cli.seed.or(cfg.seed) {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            eprintln!("seed: {s}");
            s
        }
    };
    let output = cli.output.clone().or_else(|| cfg.output.clone());
    let ctx = Context {
        cfg,
        seed,
        output,
        maximize: cli.maximize,
    };
    match &cli.command {
        Command::Evaluate(a) => commands::evaluate::run(&ctx, a),
        Command::Learn(a) => commands::learn::run(&ctx, a),
        Command::Simulate(a) => commands::simulate::run(&ctx, a),
        Command::Benchmark(a) => commands::benchmark::run(&ctx, a),
        Command::Tune(a) => commands::tune::run(&ctx, a),
    }
}
