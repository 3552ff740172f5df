//! Target policies named on the command line.

use std::path::{Path, PathBuf};

use balpol_core::data::{assignment_of, ConstantPolicy, UniformPolicy};
use balpol_core::{LogitPolicy, Matrix, PolicyAssignment};
use serde_json::Value;

use crate::error::{CliError, CliResult};
use crate::io::read_matrix_csv;

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpec {
    Uniform,
    /// Always the given 1-based arm.
    Deterministic(usize),
    /// Logit coefficients in a JSON file.
    Logit(PathBuf),
    /// An n x m assignment matrix in a CSV file.
    Assignment(PathBuf),
}

impl std::str::FromStr for PolicySpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "uniform" {
            return Ok(PolicySpec::Uniform);
        }
        if let Some(arm) = s.strip_prefix("deterministic:") {
            return match arm.parse::<usize>() {
                Ok(a) if a >= 1 => Ok(PolicySpec::Deterministic(a)),
                _ => Err(format!("'{arm}' is not an arm number (1-based)")),
            };
        }
        let path = PathBuf::from(s);
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Ok(PolicySpec::Logit(path)),
            Some("csv") => Ok(PolicySpec::Assignment(path)),
            _ => Err(format!(
                "policy must be 'uniform', 'deterministic:<arm>', a .json coefficient file or a .csv assignment, got '{s}'"
            )),
        }
    }
}

impl PolicySpec {
    /// `P[i][t]` on the rows of `x` for `m` arms.
    pub fn assignment(&self, x: &Matrix, m: usize) -> CliResult<PolicyAssignment> {
        match self {
            PolicySpec::Uniform => Ok(assignment_of(&UniformPolicy { m }, x)?),
            PolicySpec::Deterministic(a) => {
                if *a > m {
                    return Err(CliError::Usage(format!("arm {a} exceeds arm count {m}")));
                }
                Ok(assignment_of(&ConstantPolicy { arm: a - 1, m }, x)?)
            }
            PolicySpec::Logit(path) => {
                let policy = read_logit(path)?;
                if policy.m() != m || policy.d() != x.ncols() {
                    return Err(CliError::Data(format!(
                        "{}: coefficients are {} x {}, data needs {} x {}",
                        path.display(),
                        policy.m(),
                        policy.d() + 1,
                        m,
                        x.ncols() + 1
                    )));
                }
                Ok(policy.assignment(x)?)
            }
            PolicySpec::Assignment(path) => {
                let p = read_matrix_csv(path)?;
                if p.nrows() != x.nrows() || p.ncols() != m {
                    return Err(CliError::Data(format!(
                        "{}: assignment is {} x {}, data needs {} x {}",
                        path.display(),
                        p.nrows(),
                        p.ncols(),
                        x.nrows(),
                        m
                    )));
                }
                PolicyAssignment::new(p).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
            }
        }
    }
}

/// Coefficient matrix from a JSON file holding `beta` as an array of rows,
/// either at the top level or under `policy`.
pub fn read_logit(path: &Path) -> CliResult<LogitPolicy> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let beta = v
        .get("beta")
        .or_else(|| v.get("policy").and_then(|p| p.get("beta")))
        .ok_or_else(|| CliError::Data(format!("{}: no 'beta' field", path.display())))?;
    let rows: Vec<Vec<f64>> =
        serde_json::from_value(beta.clone()).map_err(|e| CliError::Data(format!("{}: beta: {e}", path.display())))?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Data(format!("{}: beta must be a non-empty rectangular array", path.display())));
    }
    let flat: Vec<f64> = rows.concat();
    Ok(LogitPolicy::new(Matrix::from_row_slice(rows.len(), cols, &flat)))
}

pub fn beta_rows(policy: &LogitPolicy) -> Vec<Vec<f64>> {
    (0..policy.beta.nrows())
        .map(|t| policy.beta.row(t).iter().copied().collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_specs() {
        assert_eq!("uniform".parse::<PolicySpec>().unwrap(), PolicySpec::Uniform);
        assert_eq!("deterministic:2".parse::<PolicySpec>().unwrap(), PolicySpec::Deterministic(2));
        assert!("deterministic:0".parse::<PolicySpec>().is_err());
        assert!(matches!("b.json".parse::<PolicySpec>().unwrap(), PolicySpec::Logit(_)));
        assert!(matches!("p.csv".parse::<PolicySpec>().unwrap(), PolicySpec::Assignment(_)));
        assert!("nonsense".parse::<PolicySpec>().is_err());
    }

    #[test]
    fn deterministic_assignment() {
        let x = Matrix::zeros(3, 1);
        let p = PolicySpec::Deterministic(2).assignment(&x, 3).unwrap();
        assert_eq!(p.column(1), vec![1.0; 3]);
        assert!(PolicySpec::Deterministic(4).assignment(&x, 3).is_err());
    }

    #[test]
    fn logit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        std::fs::write(&path, r#"{"policy": {"beta": [[0.0, 1.0], [0.5, -1.0]]}}"#).unwrap();
        let pol = read_logit(&path).unwrap();
        assert_eq!(beta_rows(&pol), vec![vec![0.0, 1.0], vec![0.5, -1.0]]);
        std::fs::write(&path, r#"{"beta": [[0.0, 1.0], [0.5]]}"#).unwrap();
        assert!(read_logit(&path).is_err());
    }
}
