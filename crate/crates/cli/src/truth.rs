//! Simulation environments saved as JSON so that learned policies can later
//! be scored against the truth that generated their data.

use std::path::Path;

use balpol_core::simulation::{Example1Env, FiniteExpansionEnv};
use balpol_core::TrueEnvironment;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::SCHEMA_VERSION;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Environment {
    Mixture {
        arms: usize,
        sigma: f64,
    },
    Expansion {
        arms: usize,
        sigma: f64,
        bandwidth: f64,
        centers: Vec<[f64; 2]>,
        coef: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthFile {
    pub schema_version: u32,
    pub environment: Environment,
}

impl Environment {
    pub fn from_expansion(env: &FiniteExpansionEnv) -> Self {
        Environment::Expansion {
            arms: env.coef.len(),
            sigma: env.mixture.sigma,
            bandwidth: env.bandwidth,
            centers: env.centers.clone(),
            coef: env.coef.clone(),
        }
    }

    pub fn build(&self) -> CliResult<Box<dyn TrueEnvironment + Send + Sync>> {
        match self {
            Environment::Mixture { arms, sigma } => {
                check(*arms, *sigma)?;
                Ok(Box::new(Example1Env::new(*arms, *sigma)))
            }
            Environment::Expansion {
                arms,
                sigma,
                bandwidth,
                centers,
                coef,
            } => {
                check(*arms, *sigma)?;
                if coef.len() != *arms || coef.iter().any(|c| c.len() != centers.len()) {
                    return Err(CliError::Data("expansion coefficients must be arms x centers".into()));
                }
                Ok(Box::new(FiniteExpansionEnv {
                    mixture: Example1Env::new(*arms, *sigma),
                    bandwidth: *bandwidth,
                    centers: centers.clone(),
                    coef: coef.clone(),
                }))
            }
        }
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let file = TruthFile {
            schema_version: SCHEMA_VERSION,
            environment: self.clone(),
        };
        let text = serde_json::to_string_pretty(&file)? + "\n";
        crate::io::emit(Some(path), &text)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
        let file: TruthFile =
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(file.environment)
    }
}

fn check(arms: usize, sigma: f64) -> CliResult<()> {
    if arms < 2 {
        return Err(CliError::Usage("at least two arms are needed".into()));
    }
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(CliError::Usage("sigma must be a nonnegative number".into()));
    }
    Ok(())
}
