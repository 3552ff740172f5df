//! Nuisance models: propensity classifiers, per-arm outcome regression,
//! cross-fitting and marginal-likelihood tuning.

pub mod crossfit;
pub mod gp;
pub mod propensity;
pub mod regression;

pub use crossfit::{crossfit, fold_assignment, CrossfitResult};
pub use gp::{gp_log_marginal_likelihood, tune_hyperparameters, TuneGrid, TunePoint, TuneResult};
pub use propensity::{
    fit_gaussian_discriminant, fit_multinomial_logit, CovarianceMode, GaussianDiscriminant,
    LogitPropensity, PropensityModel, PROPENSITY_FLOOR,
};
pub use regression::{fit_kernel_ridge_per_arm, ArmFit, RegressionModel, RidgeOptions};
