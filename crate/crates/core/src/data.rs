//! Logged bandit data, policy assignments and the simulation truth carrier.
//!
//! Treatments are stored 0-based. Conversion from the 1-based external
//! encoding happens in [`LoggedDataset::from_one_based`].

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::RngCore;

use crate::error::{Error, Result};
use crate::Matrix;

/// Observational sample of covariates, enacted treatments and outcomes.
///
/// Outcomes are costs: smaller is better everywhere in this crate.
#[derive(Debug, Clone, PartialEq)]
pub struct LoggedDataset {
    /// n x d covariates.
    pub x: Matrix,
    /// 0-based treatment indices, length n.
    pub t: Vec<usize>,
    /// Observed outcomes, length n.
    pub y: Vec<f64>,
    /// Number of treatments.
    pub m: usize,
}

/// A single broken dataset invariant.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty,
    TooFewArms { m: usize },
    LengthMismatch { what: &'static str, expected: usize, got: usize },
    TreatmentOutOfRange { row: usize },
    NonFiniteCovariate { row: usize, col: usize },
    NonFiniteOutcome { row: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "dataset has no rows"),
            Violation::TooFewArms { m } => write!(f, "treatment count {m} is below 2"),
            Violation::LengthMismatch { what, expected, got } => {
                write!(f, "{what} has length {got}, expected {expected}")
            }
            Violation::TreatmentOutOfRange { row } => {
                write!(f, "treatment index out of range at row {row}")
            }
            Violation::NonFiniteCovariate { row, col } => {
                write!(f, "non-finite covariate at row {row}, column {col}")
            }
            Violation::NonFiniteOutcome { row } => write!(f, "non-finite outcome at row {row}"),
        }
    }
}

impl LoggedDataset {
    /// Builds a dataset without checking invariants; see [`validate_dataset`].
    pub fn new(x: Matrix, t: Vec<usize>, y: Vec<f64>, m: usize) -> Self {
        Self { x, t, y, m }
    }

    /// Builds a dataset from 1-based treatment labels.
    ///
    /// Labels below 1 cannot be represented internally and are rejected here;
    /// labels above `m` are kept and reported by [`validate_dataset`].
    pub fn from_one_based(x: Matrix, t: &[i64], y: Vec<f64>, m: usize) -> Result<Self> {
        let t = t
            .iter()
            .enumerate()
            .map(|(row, &ti)| {
                if ti < 1 {
                    Err(Error::InvalidInput(format!(
                        "treatment index out of range at row {row}"
                    )))
                } else {
                    Ok((ti - 1) as usize)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::new(x, t, y, m))
    }

    /// Builds and validates, failing on the first violation.
    pub fn try_new(x: Matrix, t: Vec<usize>, y: Vec<f64>, m: usize) -> Result<Self> {
        let ds = Self::new(x, t, y, m);
        ds.ensure_valid()?;
        Ok(ds)
    }

    pub fn ensure_valid(&self) -> Result<()> {
        match validate_dataset(self) {
            Ok(()) => Ok(()),
            Err(v) => Err(Error::InvalidInput(format!("{}", v[0]))),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Row `i` of the covariates as an owned vector.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().copied().collect()
    }

    /// Number of units that received each arm.
    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.m];
        for &t in &self.t {
            if t < self.m {
                counts[t] += 1;
            }
        }
        counts
    }

    /// Indices of units that received `arm`.
    pub fn arm_indices(&self, arm: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.t[i] == arm).collect()
    }

    /// Sub-dataset made of the given rows, in order.
    pub fn subset(&self, rows: &[usize]) -> Self {
        let x = Matrix::from_fn(rows.len(), self.d(), |i, j| self.x[(rows[i], j)]);
        Self {
            x,
            t: rows.iter().map(|&i| self.t[i]).collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            m: self.m,
        }
    }

    /// Same data with outcomes negated, turning rewards into costs.
    pub fn negated(&self) -> Self {
        let mut out = self.clone();
        out.y.iter_mut().for_each(|y| *y = -*y);
        out
    }
}

/// Checks every dataset invariant, returning all violations found.
pub fn validate_dataset(ds: &LoggedDataset) -> core::result::Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    let n = ds.y.len();
    if n == 0 {
        violations.push(Violation::Empty);
    }
    if ds.m < 2 {
        violations.push(Violation::TooFewArms { m: ds.m });
    }
    if ds.t.len() != n {
        violations.push(Violation::LengthMismatch {
            what: "treatments",
            expected: n,
            got: ds.t.len(),
        });
    }
    if ds.x.nrows() != n {
        violations.push(Violation::LengthMismatch {
            what: "covariates",
            expected: n,
            got: ds.x.nrows(),
        });
    }
    for (row, &t) in ds.t.iter().enumerate() {
        if t >= ds.m {
            violations.push(Violation::TreatmentOutOfRange { row });
        }
    }
    for row in 0..ds.x.nrows() {
        for col in 0..ds.x.ncols() {
            if !ds.x[(row, col)].is_finite() {
                violations.push(Violation::NonFiniteCovariate { row, col });
            }
        }
    }
    for (row, y) in ds.y.iter().enumerate() {
        if !y.is_finite() {
            violations.push(Violation::NonFiniteOutcome { row });
        }
    }
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

/// Tolerance on row sums of an assignment matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;

/// The n x m matrix `P[i][t] = pi_t(X_i)` of a policy on a fixed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyAssignment {
    p: Matrix,
}

impl PolicyAssignment {
    /// Wraps a row-stochastic matrix, checking entries and row sums.
    pub fn new(p: Matrix) -> Result<Self> {
        for i in 0..p.nrows() {
            let mut sum = 0.0;
            for t in 0..p.ncols() {
                let v = p[(i, t)];
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::InvalidInput(format!(
                        "assignment entry ({i}, {t}) = {v} outside [0, 1]"
                    )));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidInput(format!(
                    "assignment row {i} sums to {sum}"
                )));
            }
        }
        Ok(Self { p })
    }

    /// Wraps any matrix; the balance algebra is defined for non-stochastic
    /// matrices too.
    pub fn from_matrix_unchecked(p: Matrix) -> Self {
        Self { p }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.p
    }

    pub fn into_matrix(self) -> Matrix {
        self.p
    }

    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn m(&self) -> usize {
        self.p.ncols()
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> f64 {
        self.p[(i, t)]
    }

    /// Column `t` as an owned vector.
    pub fn column(&self, t: usize) -> Vec<f64> {
        self.p.column(t).iter().copied().collect()
    }

    /// `P[i][T_i]` for each unit.
    pub fn on_observed(&self, treatments: &[usize]) -> Vec<f64> {
        treatments
            .iter()
            .enumerate()
            .map(|(i, &t)| self.p[(i, t)])
            .collect()
    }
}

/// Anything mapping covariates to a probability vector over arms.
pub trait Policy {
    fn n_arms(&self) -> usize;
    fn probabilities(&self, x: &[f64]) -> Vec<f64>;
}

impl<P: Policy + ?Sized> Policy for &P {
    fn n_arms(&self) -> usize {
        (**self).n_arms()
    }
    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        (**self).probabilities(x)
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn n_arms(&self) -> usize {
        (**self).n_arms()
    }
    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        (**self).probabilities(x)
    }
}

/// Uniformly random treatment.
#[derive(Debug, Clone, Copy)]
pub struct UniformPolicy {
    pub m: usize,
}

impl Policy for UniformPolicy {
    fn n_arms(&self) -> usize {
        self.m
    }
    fn probabilities(&self, _x: &[f64]) -> Vec<f64> {
        vec![1.0 / self.m as f64; self.m]
    }
}

/// Always the same (0-based) arm.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPolicy {
    pub arm: usize,
    pub m: usize,
}

impl Policy for ConstantPolicy {
    fn n_arms(&self) -> usize {
        self.m
    }
    fn probabilities(&self, _x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.m];
        p[self.arm] = 1.0;
        p
    }
}

/// Deterministic policy given by a closure returning a 0-based arm.
pub struct FnPolicy<F> {
    pub m: usize,
    pub choose: F,
}

impl<F: Fn(&[f64]) -> usize> Policy for FnPolicy<F> {
    fn n_arms(&self) -> usize {
        self.m
    }
    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; self.m];
        p[(self.choose)(x)] = 1.0;
        p
    }
}

/// Materializes `P[i][t] = pi_t(X_i)`.
pub fn assignment_of<P: Policy + ?Sized>(policy: &P, x: &Matrix) -> Result<PolicyAssignment> {
    let m = policy.n_arms();
    let mut p = Matrix::zeros(x.nrows(), m);
    let mut row = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        let probs = policy.probabilities(&row);
        if probs.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: probs.len(),
            });
        }
        for (t, &v) in probs.iter().enumerate() {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidInput(format!(
                    "policy returned probability {v} for arm {t} at row {i}"
                )));
            }
            p[(i, t)] = v;
        }
    }
    PolicyAssignment::new(p)
}

/// Simulation-only ground truth: mean outcomes, logging propensities, noise,
/// and a sampler for fresh population draws.
pub trait TrueEnvironment {
    fn n_arms(&self) -> usize;
    fn dim(&self) -> usize;
    /// `mu_t(x)` for every arm.
    fn mean_outcomes(&self, x: &[f64]) -> Vec<f64>;
    /// Logging propensities `phi(x)`, a point of the simplex.
    fn propensities(&self, x: &[f64]) -> Vec<f64>;
    fn noise_sd(&self) -> f64;
    /// One draw of (X, T) from the population.
    fn sample_unit(&self, rng: &mut dyn RngCore) -> (Vec<f64>, usize);
}

/// n x m matrix of `mu_t(X_i)`.
pub fn mean_outcome_matrix<E: TrueEnvironment + ?Sized>(env: &E, x: &Matrix) -> Matrix {
    rowwise(x, env.n_arms(), |r| env.mean_outcomes(r))
}

/// n x m matrix of `phi_t(X_i)`.
pub fn propensity_matrix<E: TrueEnvironment + ?Sized>(env: &E, x: &Matrix) -> Matrix {
    rowwise(x, env.n_arms(), |r| env.propensities(r))
}

pub(crate) fn rowwise(x: &Matrix, m: usize, f: impl Fn(&[f64]) -> Vec<f64>) -> Matrix {
    let mut out = Matrix::zeros(x.nrows(), m);
    let mut row = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = x[(i, j)];
        }
        for (t, v) in f(&row).into_iter().enumerate() {
            out[(i, t)] = v;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn small() -> LoggedDataset {
        let x = Matrix::from_row_slice(3, 2, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        LoggedDataset::from_one_based(x, &[1, 2, 1], vec![0.5, 1.5, -2.0], 2).unwrap()
    }

    #[test]
    fn well_formed_dataset_validates() {
        let ds = small();
        assert!(validate_dataset(&ds).is_ok());
        assert_eq!(ds.t, vec![0, 1, 0]);
    }

    #[test]
    fn out_of_range_treatment_is_reported_with_row() {
        let x = Matrix::zeros(3, 1);
        let ds = LoggedDataset::from_one_based(x, &[1, 2, 4], vec![0.0; 3], 3).unwrap();
        let v = validate_dataset(&ds).unwrap_err();
        assert_eq!(v, vec![Violation::TreatmentOutOfRange { row: 2 }]);
        assert_eq!(v[0].to_string(), "treatment index out of range at row 2");
    }

    #[test]
    fn nan_outcome_is_reported() {
        let x = Matrix::zeros(2, 1);
        let ds = LoggedDataset::new(x, vec![0, 1], vec![f64::NAN, 1.0], 2);
        let v = validate_dataset(&ds).unwrap_err();
        assert_eq!(v[0].to_string(), "non-finite outcome at row 0");
    }

    #[test]
    fn multiple_violations_are_all_listed() {
        let mut x = Matrix::zeros(2, 1);
        x[(1, 0)] = f64::INFINITY;
        let ds = LoggedDataset::new(x, vec![5, 0, 1], vec![1.0, 2.0], 2);
        let v = validate_dataset(&ds).unwrap_err();
        assert!(v.contains(&Violation::NonFiniteCovariate { row: 1, col: 0 }));
        assert!(v.contains(&Violation::TreatmentOutOfRange { row: 0 }));
        assert!(v.iter().any(|v| matches!(v, Violation::LengthMismatch { .. })));
    }

    #[test]
    fn single_row_is_accepted() {
        let ds = LoggedDataset::new(Matrix::zeros(1, 1), vec![0], vec![1.0], 2);
        assert!(validate_dataset(&ds).is_ok());
    }

    #[test]
    fn uniform_assignment() {
        let p = assignment_of(&UniformPolicy { m: 4 }, &Matrix::zeros(2, 3)).unwrap();
        assert!(p.matrix().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn deterministic_assignment_is_one_hot() {
        let x = Matrix::from_row_slice(3, 1, &[-1.0, 0.5, 2.0]);
        let p = assignment_of(&ConstantPolicy { arm: 0, m: 3 }, &x).unwrap();
        for i in 0..3 {
            assert_eq!(p.get(i, 0), 1.0);
            assert_eq!(p.get(i, 1) + p.get(i, 2), 0.0);
        }
        let threshold = FnPolicy {
            m: 2,
            choose: |x: &[f64]| usize::from(x[0] > 0.0),
        };
        let p = assignment_of(&threshold, &x).unwrap();
        for i in 0..3 {
            let ones = (0..2).filter(|&t| p.get(i, t) == 1.0).count();
            let zeros = (0..2).filter(|&t| p.get(i, t) == 0.0).count();
            assert_eq!((ones, zeros), (1, 1));
        }
    }

    struct Broken(Vec<f64>);
    impl Policy for Broken {
        fn n_arms(&self) -> usize {
            2
        }
        fn probabilities(&self, _x: &[f64]) -> Vec<f64> {
            self.0.clone()
        }
    }

    #[test]
    fn assignment_rejects_bad_policies() {
        let x = Matrix::zeros(1, 1);
        assert!(matches!(
            assignment_of(&Broken(vec![1.0]), &x),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(assignment_of(&Broken(vec![1.5, -0.5]), &x).is_err());
    }

    #[test]
    fn negation_and_subset() {
        let ds = small();
        assert_eq!(ds.negated().y, vec![-0.5, -1.5, 2.0]);
        let sub = ds.subset(&[2, 0]);
        assert_eq!(sub.t, vec![0, 0]);
        assert_eq!(sub.x[(0, 1)], 5.0);
        assert_eq!(ds.arm_counts(), vec![2, 1]);
    }
}
