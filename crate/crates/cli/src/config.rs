//! Run configuration read from TOML. Every section is optional; absent keys
//! take the defaults below and unknown keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use balpol_core::balance::{BalanceConfig, ImbalanceScale, LambdaSpec, QpOptions};
use balpol_core::models::{CovarianceMode, RidgeOptions, TuneGrid};
use balpol_core::{KernelSpec, LearnerConfig};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::io::read_matrix_csv;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub kernel: KernelSection,
    pub balance: BalanceSection,
    pub propensity: PropensitySection,
    pub outcome: OutcomeSection,
    pub crossfit: CrossfitSection,
    pub tune: TuneSection,
    pub learner: LearnerSection,
    /// Dotted keys present in the file, e.g. `balance.lambda`.
    #[serde(skip)]
    pub explicit: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    pub bandwidth: f64,
    /// `"sample"` for the sample covariance, otherwise a CSV file holding
    /// the d x d scale matrix.
    pub scale: String,
}

impl Default for KernelSection {
    fn default() -> Self {
        Self {
            bandwidth: 1.0,
            scale: "sample".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gamma {
    Shared(f64),
    PerArm(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalanceSection {
    pub gamma: Gamma,
    /// Variance penalty `kappa` in `Lambda = kappa I`.
    pub lambda: f64,
    pub tol: f64,
    /// Active-set iteration cap; absent means `10 n + 100`.
    pub max_iters: Option<usize>,
    pub imbalance: Imbalance,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Imbalance {
    /// Raw double sum `z^T K z`.
    Sum,
    /// `z^T K z / n^2`, on the scale of the variance term.
    Mean,
}

impl Default for BalanceSection {
    fn default() -> Self {
        Self {
            gamma: Gamma::Shared(1.0),
            lambda: 1.0,
            tol: 1e-7,
            max_iters: None,
            imbalance: Imbalance::Sum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PropensityKind {
    Logit,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    PerArm,
    Shared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropensitySection {
    pub kind: PropensityKind,
    pub covariance: Covariance,
}

impl Default for PropensitySection {
    fn default() -> Self {
        Self {
            kind: PropensityKind::Gaussian,
            covariance: Covariance::PerArm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeModel {
    KernelRidge,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutcomeSection {
    pub model: OutcomeModel,
    pub ridge: f64,
    /// Fit each arm around its mean instead of through the origin.
    pub center: bool,
    /// Bandwidth of the regression kernel; absent means `kernel.bandwidth`.
    pub bandwidth: Option<f64>,
}

impl Default for OutcomeSection {
    fn default() -> Self {
        Self {
            model: OutcomeModel::KernelRidge,
            ridge: 1.0,
            center: false,
            bandwidth: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CrossfitSection {
    /// Out-of-fold outcome predictions; off means one fit on the full sample.
    pub enabled: bool,
    pub folds: usize,
}

impl Default for CrossfitSection {
    fn default() -> Self {
        Self { enabled: true, folds: 5 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TuneSection {
    pub grid: GridSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub bandwidths: Vec<f64>,
    pub gammas: Vec<f64>,
    pub noise: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            bandwidths: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            gammas: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            noise: vec![0.01, 0.1, 1.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSection {
    pub lambda: f64,
    pub restarts: usize,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub init_scale: f64,
    pub qp_tol: f64,
}

impl Default for LearnerSection {
    fn default() -> Self {
        let d = LearnerConfig::default();
        Self {
            lambda: d.lambda_reg,
            restarts: d.restarts,
            grad_tol: d.grad_tol,
            max_iters: d.max_iters,
            init_scale: d.init_scale,
            qp_tol: d.qp_tol,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let bad = |e: toml::de::Error| CliError::Usage(format!("config: {}", e.message()));
        let table: toml::Table = toml::from_str(text).map_err(bad)?;
        let mut explicit = BTreeSet::new();
        collect_keys(&table, "", &mut explicit);
        let mut cfg: RunConfig = table.try_into().map_err(bad)?;
        cfg.explicit = explicit;
        Ok(cfg)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec, CliError> {
        self.kernel_with_bandwidth(self.kernel.bandwidth)
    }

    fn kernel_with_bandwidth(&self, bandwidth: f64) -> Result<KernelSpec, CliError> {
        if self.kernel.scale == "sample" {
            Ok(KernelSpec::mahalanobis(bandwidth))
        } else {
            Ok(KernelSpec::with_scale(bandwidth, read_matrix_csv(Path::new(&self.kernel.scale))?))
        }
    }

    pub fn outcome_kernel(&self) -> Result<KernelSpec, CliError> {
        self.kernel_with_bandwidth(self.outcome.bandwidth.unwrap_or(self.kernel.bandwidth))
    }

    pub fn balance_config(&self) -> Result<BalanceConfig, CliError> {
        let gammas = match &self.balance.gamma {
            Gamma::Shared(g) => vec![*g],
            Gamma::PerArm(g) => g.clone(),
        };
        Ok(BalanceConfig {
            gammas,
            lambda: LambdaSpec::Scalar(self.balance.lambda),
            imbalance: match self.balance.imbalance {
                Imbalance::Sum => ImbalanceScale::Sum,
                Imbalance::Mean => ImbalanceScale::Mean,
            },
            ..BalanceConfig::default()
        }
        .with_kernel(self.kernel_spec()?))
    }

    pub fn qp_options(&self) -> QpOptions {
        QpOptions {
            tol: self.balance.tol,
            max_iters: self.balance.max_iters,
            warm_start: None,
        }
    }

    pub fn covariance(&self) -> CovarianceMode {
        match self.propensity.covariance {
            Covariance::PerArm => CovarianceMode::PerArm,
            Covariance::Shared => CovarianceMode::Shared,
        }
    }

    pub fn ridge(&self) -> RidgeOptions {
        RidgeOptions {
            ridge: self.outcome.ridge,
            center: self.outcome.center,
        }
    }

    pub fn learner_config(&self, seed: u64) -> LearnerConfig {
        LearnerConfig {
            lambda_reg: self.learner.lambda,
            restarts: self.learner.restarts,
            grad_tol: self.learner.grad_tol,
            max_iters: self.learner.max_iters,
            seed,
            init_scale: self.learner.init_scale,
            qp_tol: self.learner.qp_tol,
        }
    }

    pub fn tune_grid(&self) -> TuneGrid {
        TuneGrid {
            bandwidths: self.tune.grid.bandwidths.clone(),
            gammas: self.tune.grid.gammas.clone(),
            noise_vars: self.tune.grid.noise.clone(),
        }
    }
}

fn collect_keys(table: &toml::Table, prefix: &str, out: &mut BTreeSet<String>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        if let toml::Value::Table(t) = v {
            collect_keys(t, &key, out);
        } else {
            out.insert(key);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::from_toml("[balance]\nlamda = 2.0\n").unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
        let err = RunConfig::from_toml("colour = 1\n").unwrap_err();
        assert!(err.to_string().contains("colour"), "{err}");
    }

    #[test]
    fn sections_parse() {
        let cfg = RunConfig::from_toml(
            "seed = 4\n[balance]\ngamma = [1.0, 2.0]\nlambda = 0.5\n[learner]\nrestarts = 3\n\
             [propensity]\nkind = \"logit\"\ncovariance = \"shared\"\n[tune.grid]\nbandwidths = [1.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(4));
        assert_eq!(cfg.balance.gamma, Gamma::PerArm(vec![1.0, 2.0]));
        assert_eq!(cfg.balance_config().unwrap().lambda, LambdaSpec::Scalar(0.5));
        assert_eq!(cfg.learner_config(0).restarts, 3);
        assert_eq!(cfg.propensity.kind, PropensityKind::Logit);
        assert_eq!(cfg.covariance(), CovarianceMode::Shared);
        assert_eq!(cfg.tune_grid().bandwidths, vec![1.0]);
        assert_eq!(cfg.tune_grid().gammas, GridSection::default().gammas);
        assert!(cfg.is_set("balance.lambda") && cfg.is_set("tune.grid.bandwidths") && cfg.is_set("seed"));
        assert!(!cfg.is_set("balance.tol"));
    }

    #[test]
    fn scalar_gamma() {
        let cfg = RunConfig::from_toml("[balance]\ngamma = 2.0\n").unwrap();
        assert_eq!(cfg.balance_config().unwrap().gammas, vec![2.0]);
    }
}
