//! Mahalanobis RBF kernel, sample covariance and Gram matrices.

use alloc::sync::Arc;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::{Matrix, Vector};

/// Relative ridge added to a sample covariance before inversion.
pub const COVARIANCE_RIDGE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `exp(-(x - x')^T S^{-1} (x - x') / s^2)`.
    MahalanobisRbf,
}

/// Scale matrix `S` of the Mahalanobis distance.
#[derive(Debug, Clone, PartialEq)]
pub enum ScaleMatrix {
    /// Use the ridge-regularized sample covariance of the data the kernel is
    /// resolved against.
    Sample,
    Explicit(Matrix),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub bandwidth: f64,
    pub scale: ScaleMatrix,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self::mahalanobis(1.0)
    }
}

impl KernelSpec {
    /// Mahalanobis RBF scaled by the sample covariance.
    pub fn mahalanobis(bandwidth: f64) -> Self {
        Self {
            kind: KernelKind::MahalanobisRbf,
            bandwidth,
            scale: ScaleMatrix::Sample,
        }
    }

    /// RBF with an explicit scale matrix.
    pub fn with_scale(bandwidth: f64, scale: Matrix) -> Self {
        Self {
            kind: KernelKind::MahalanobisRbf,
            bandwidth,
            scale: ScaleMatrix::Explicit(scale),
        }
    }

    /// Fixes the scale matrix, estimating it from `x` if needed.
    pub fn resolve(&self, x: &Matrix) -> Result<Kernel> {
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::InvalidInput(alloc::format!(
                "kernel bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        let scale = match &self.scale {
            ScaleMatrix::Sample => sample_covariance(x)?,
            ScaleMatrix::Explicit(s) => s.clone(),
        };
        Kernel::new(self.bandwidth, &scale)
    }
}

/// (n-1)-denominator sample covariance plus a ridge of
/// `1e-8 * trace / d` (or `1e-8` when the trace vanishes).
pub fn sample_covariance(x: &Matrix) -> Result<Matrix> {
    let n = x.nrows();
    let d = x.ncols();
    if n < 2 {
        return Err(Error::CovarianceUndefined);
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut cov = Matrix::zeros(d, d);
    for i in 0..n {
        for a in 0..d {
            let da = x[(i, a)] - mean[a];
            for b in a..d {
                cov[(a, b)] += da * (x[(i, b)] - mean[b]);
            }
        }
    }
    for a in 0..d {
        for b in a..d {
            let v = cov[(a, b)] / (n - 1) as f64;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    let trace = cov.trace();
    let eps = if trace > 0.0 {
        COVARIANCE_RIDGE * trace / d as f64
    } else {
        COVARIANCE_RIDGE
    };
    for a in 0..d {
        cov[(a, a)] += eps;
    }
    Ok(cov)
}

/// A kernel with its scale matrix fixed.
///
/// Points are whitened once by the Cholesky factor of `S`, after which the
/// kernel is a plain Gaussian of the Euclidean distance over `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    bandwidth: f64,
    /// Lower Cholesky factor `L` of the scale matrix.
    chol: Matrix,
}

impl Kernel {
    pub fn new(bandwidth: f64, scale: &Matrix) -> Result<Self> {
        if scale.nrows() != scale.ncols() {
            return Err(Error::DimensionMismatch {
                expected: scale.nrows(),
                got: scale.ncols(),
            });
        }
        for a in 0..scale.nrows() {
            for b in 0..a {
                if (scale[(a, b)] - scale[(b, a)]).abs() > 1e-10 * (1.0 + scale[(a, b)].abs()) {
                    return Err(Error::InvalidInput("scale matrix is not symmetric".into()));
                }
            }
        }
        let chol = nalgebra::Cholesky::new(scale.clone())
            .ok_or_else(|| Error::InvalidInput("scale matrix is not positive definite".into()))?
            .l();
        Ok(Self { bandwidth, chol })
    }

    /// Identity-scaled RBF, `exp(-|x - x'|^2 / s^2)`.
    pub fn isotropic(bandwidth: f64, d: usize) -> Self {
        Self {
            bandwidth,
            chol: Matrix::identity(d, d),
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn dim(&self) -> usize {
        self.chol.nrows()
    }

    /// Same scale matrix, different bandwidth.
    pub fn with_bandwidth(&self, bandwidth: f64) -> Self {
        Self {
            bandwidth,
            chol: self.chol.clone(),
        }
    }

    /// `L^{-1} x` for every row of `x`, with rows divided by the bandwidth.
    fn whiten(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.ncols(),
            });
        }
        let xt = x.transpose();
        let z = self
            .chol
            .solve_lower_triangular(&xt)
            .ok_or(Error::Singular("kernel scale factor"))?;
        Ok(z.transpose() / self.bandwidth)
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        if x.len() != self.dim() || y.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: if x.len() != self.dim() { x.len() } else { y.len() },
            });
        }
        let diff = Vector::from_iterator(x.len(), x.iter().zip(y).map(|(a, b)| a - b));
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .ok_or(Error::Singular("kernel scale factor"))?;
        Ok((-z.norm_squared() / (self.bandwidth * self.bandwidth)).exp())
    }

    /// Gram matrix of the rows of `x`, computed on one triangle and mirrored.
    pub fn gram(&self, x: &Matrix) -> Result<GramMatrix> {
        let z = self.whiten(x)?;
        let n = z.nrows();
        let mut k = Matrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 1.0;
            for j in 0..i {
                let mut d2 = 0.0;
                for c in 0..z.ncols() {
                    let diff = z[(i, c)] - z[(j, c)];
                    d2 += diff * diff;
                }
                let v = (-d2).exp();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(GramMatrix { k })
    }

    /// Cross-kernel matrix with `K[i][j] = k(a_i, b_j)`.
    pub fn cross(&self, a: &Matrix, b: &Matrix) -> Result<Matrix> {
        let za = self.whiten(a)?;
        let zb = self.whiten(b)?;
        Ok(Matrix::from_fn(za.nrows(), zb.nrows(), |i, j| {
            let mut d2 = 0.0;
            for c in 0..za.ncols() {
                let diff = za[(i, c)] - zb[(j, c)];
                d2 += diff * diff;
            }
            (-d2).exp()
        }))
    }
}

/// Evaluates a kernel spec on a single pair. Requires an explicit scale
/// matrix, since a sample scale has nothing to be estimated from here.
pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    match &spec.scale {
        ScaleMatrix::Explicit(s) => Kernel::new(spec.bandwidth, s)?.eval(x, y),
        ScaleMatrix::Sample => Err(Error::InvalidInput(
            "kernel with sample scale must be resolved against data first".into(),
        )),
    }
}

/// Resolves `spec` on `x` and builds the Gram matrix.
pub fn gram_matrix(spec: &KernelSpec, x: &Matrix) -> Result<GramMatrix> {
    spec.resolve(x)?.gram(x)
}

/// Symmetric PSD kernel matrix on a fixed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    k: Matrix,
}

impl GramMatrix {
    /// Wraps a precomputed kernel matrix.
    pub fn from_matrix(k: Matrix) -> Self {
        Self { k }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.k
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.k[(i, j)]
    }
}

/// Per-arm Gram matrices on one covariate sample.
///
/// Arms that share a kernel share one allocation; learners build this once
/// for the fixed sample and reuse it for every QP.
#[derive(Debug, Clone)]
pub struct ArmGrams {
    arms: Vec<Arc<GramMatrix>>,
}

impl ArmGrams {
    /// One kernel shared by all `m` arms.
    pub fn shared(gram: GramMatrix, m: usize) -> Self {
        let g = Arc::new(gram);
        Self {
            arms: (0..m).map(|_| g.clone()).collect(),
        }
    }

    pub fn per_arm(grams: Vec<GramMatrix>) -> Self {
        Self {
            arms: grams.into_iter().map(Arc::new).collect(),
        }
    }

    /// Builds grams from kernel specs; a single spec is shared by all arms.
    pub fn build(specs: &[KernelSpec], x: &Matrix, m: usize) -> Result<Self> {
        match specs {
            [] => Self::build(&[KernelSpec::default()], x, m),
            [one] => Ok(Self::shared(gram_matrix(one, x)?, m)),
            many if many.len() == m => {
                let mut arms: Vec<Arc<GramMatrix>> = Vec::with_capacity(m);
                for (t, spec) in many.iter().enumerate() {
                    if let Some(prev) = many[..t].iter().position(|s| s == spec) {
                        let shared = arms[prev].clone();
                        arms.push(shared);
                    } else {
                        arms.push(Arc::new(gram_matrix(spec, x)?));
                    }
                }
                Ok(Self { arms })
            }
            many => Err(Error::DimensionMismatch {
                expected: m,
                got: many.len(),
            }),
        }
    }

    pub fn arm(&self, t: usize) -> &GramMatrix {
        &self.arms[t]
    }

    pub fn m(&self) -> usize {
        self.arms.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ridge(trace: f64, d: usize) -> f64 {
        if trace > 0.0 {
            1e-8 * trace / d as f64
        } else {
            1e-8
        }
    }

    #[test]
    fn covariance_of_square() {
        let x = Matrix::from_row_slice(4, 2, &[0., 0., 2., 0., 0., 2., 2., 2.]);
        let s = sample_covariance(&x).unwrap();
        // Hand computation: each coordinate has squared deviations 4 * 1 over n - 1 = 3.
        let eps = ridge(8.0 / 3.0, 2);
        assert_abs_diff_eq!(s[(0, 0)], 4.0 / 3.0 + eps, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(1, 1)], 4.0 / 3.0 + eps, epsilon = 1e-15);
        assert_abs_diff_eq!(s[(0, 1)], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn covariance_of_identical_rows_is_pure_ridge() {
        let x = Matrix::from_row_slice(3, 2, &[1., 2., 1., 2., 1., 2.]);
        let s = sample_covariance(&x).unwrap();
        assert_eq!(s, Matrix::identity(2, 2) * 1e-8);
    }

    #[test]
    fn covariance_one_dimensional() {
        let x = Matrix::from_row_slice(2, 1, &[0., 1.]);
        let s = sample_covariance(&x).unwrap();
        assert_abs_diff_eq!(s[(0, 0)], 0.5 + ridge(0.5, 1), epsilon = 1e-16);
    }

    #[test]
    fn covariance_needs_two_rows() {
        assert!(matches!(
            sample_covariance(&Matrix::zeros(1, 2)),
            Err(Error::CovarianceUndefined)
        ));
    }

    #[test]
    fn kernel_values() {
        let id = Matrix::identity(2, 2);
        let k1 = KernelSpec::with_scale(1.0, id.clone());
        let k2 = KernelSpec::with_scale(2.0, id);
        assert_eq!(kernel_eval(&k1, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        assert_abs_diff_eq!(
            kernel_eval(&k1, &[0., 0.], &[1., 0.]).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            kernel_eval(&k2, &[0., 0.], &[2., 0.]).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-15
        );
        assert!(kernel_eval(&k1, &[0.], &[1., 0.]).is_err());
        assert!(kernel_eval(&KernelSpec::mahalanobis(1.0), &[0.], &[1.]).is_err());
    }

    #[test]
    fn gram_examples() {
        let spec = KernelSpec::with_scale(1.0, Matrix::identity(2, 2));
        let g = gram_matrix(&spec, &Matrix::from_row_slice(1, 2, &[3., 4.])).unwrap();
        assert_eq!(g.matrix(), &Matrix::from_element(1, 1, 1.0));

        let g = gram_matrix(&spec, &Matrix::from_row_slice(2, 2, &[1., 1., 1., 1.])).unwrap();
        assert_eq!(g.matrix(), &Matrix::from_element(2, 2, 1.0));

        let g = gram_matrix(&spec, &Matrix::from_row_slice(2, 2, &[0., 0., 1., 0.])).unwrap();
        let e = (-1.0f64).exp();
        assert_abs_diff_eq!(g.get(0, 1), e, epsilon = 1e-15);
        assert_abs_diff_eq!(g.get(1, 0), e, epsilon = 1e-15);
        assert_eq!(g.get(0, 0), 1.0);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(KernelSpec::mahalanobis(0.0).resolve(&Matrix::zeros(3, 1)).is_err());
        let asym = Matrix::from_row_slice(2, 2, &[1., 0.5, 0., 1.]);
        assert!(Kernel::new(1.0, &asym).is_err());
        let indefinite = Matrix::from_row_slice(2, 2, &[1., 2., 2., 1.]);
        assert!(Kernel::new(1.0, &indefinite).is_err());
    }

    #[test]
    fn shared_arm_grams_share_storage() {
        let x = Matrix::from_row_slice(3, 1, &[0., 1., 3.]);
        let grams = ArmGrams::build(&[KernelSpec::mahalanobis(1.0)], &x, 4).unwrap();
        assert_eq!(grams.m(), 4);
        assert!(core::ptr::eq(grams.arm(0), grams.arm(3)));
        let two = ArmGrams::build(
            &[KernelSpec::mahalanobis(1.0), KernelSpec::mahalanobis(2.0)],
            &x,
            2,
        )
        .unwrap();
        assert!(two.arm(0).get(0, 1) < two.arm(1).get(0, 1));
    }
}
