//! Residual-correlation test statistics with the variance correction for
//! correlated row samples.
//!
//! For a pair `(i, j)` the residual of column `i` is taken from its node-wise
//! fit with the coefficient on `j` set to zero (and vice versa), so under the
//! null both residuals are built from the null-constrained models. The
//! statistic
//!
//! `T_ij = sqrt((n-1) p / A_hat) * r_ij / sqrt(r_ii r_jj)`
//!
//! is asymptotically standard normal under `gamma_ij = 0`, where `A_hat`
//! estimates `A_p = p |Sigma|_F^2 / tr(Sigma)^2` from a thresholded column
//! covariance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::regression::{fit_all, gram_of_rows, CoefficientSet, LassoConfig, RowCovariance};

/// Residual variances below this are treated as degenerate.
pub const MIN_RESIDUAL_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    /// Tests the column precision `Gamma` (`q x q`).
    Gamma,
    /// Tests the row precision `Omega` (`p x p`) on transposed observations.
    Omega,
}

#[derive(Debug, Clone)]
pub struct ResidualCov {
    pub r: DMatrix<f64>,
}

/// Residual covariances `r_ij` from the row covariance and the node-wise fits.
///
/// With `B` holding `beta_j` in column `j` and full-fit residuals
/// `e_i = z_i - sum_m B_mi z_m`, the null-constrained residual for the pair is
/// `e_i + B_ji z_j`. Expanding the product gives
///
/// `r_ij = M_ij + B_ij C_ii + B_ji C_jj + B_ij B_ji Psi_ij`
///
/// with `C = (I - B)' Psi_hat` and `M = C (I - B)`, so no residual vector is
/// ever formed.
pub fn residual_cov(cov: &RowCovariance, coeffs: &CoefficientSet) -> Result<ResidualCov> {
    let q = cov.q();
    if coeffs.q() != q {
        return Err(Error::Dimension(format!(
            "coefficients are for q = {}, covariance has q = {q}",
            coeffs.q()
        )));
    }
    let psi = cov.psi_hat();
    let b = coeffs.betas();
    let i_minus_b = DMatrix::<f64>::identity(q, q) - b;
    let c = i_minus_b.transpose() * psi;
    let m = &c * &i_minus_b;
    let mut r = DMatrix::zeros(q, q);
    for i in 0..q {
        r[(i, i)] = m[(i, i)];
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)])
                + b[(i, j)] * c[(i, i)]
                + b[(j, i)] * c[(j, j)]
                + b[(i, j)] * b[(j, i)] * psi[(i, j)];
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    Ok(ResidualCov { r })
}

/// `Sigma_hat = Y Y' / ((n-1) q)` over the `nq` centered column samples.
pub fn column_covariance(d: &Dataset) -> DMatrix<f64> {
    gram_of_rows(&d.transposed()) / ((d.n() - 1) * d.q()) as f64
}

/// Hard-thresholds off-diagonal entries below
/// `lambda * sqrt(log max(p, nq) / (nq))`; the diagonal is kept.
pub fn threshold_covariance(sigma_hat: &DMatrix<f64>, lambda: f64, n: usize, q: usize) -> DMatrix<f64> {
    let p = sigma_hat.nrows();
    let nq = (n * q) as f64;
    let cutoff = lambda * ((p as f64).max(nq).ln() / nq).sqrt();
    DMatrix::from_fn(p, p, |i, j| {
        let v = sigma_hat[(i, j)];
        if i == j || v.abs() >= cutoff {
            v
        } else {
            0.0
        }
    })
}

/// `p |S|_F^2 / tr(S)^2`. Applied to the true `Sigma` this is `A_p`; applied
/// to the thresholded estimate it is `A_hat`.
pub fn variance_correction(sigma: &DMatrix<f64>) -> Result<f64> {
    let p = sigma.nrows() as f64;
    let tr = sigma.trace();
    if !(tr > 0.0) {
        return Err(Error::Degenerate(format!(
            "covariance trace must be positive, got {tr}"
        )));
    }
    Ok(p * sigma.norm_squared() / (tr * tr))
}

#[derive(Debug, Clone)]
pub struct VarianceCorrection {
    pub sigma_hat: DMatrix<f64>,
    pub lambda: f64,
    pub sigma_thresholded: DMatrix<f64>,
    pub a_hat: f64,
}

impl VarianceCorrection {
    /// `n` observations, each contributing `q` column samples.
    pub fn new(sigma_hat: DMatrix<f64>, lambda: f64, n: usize, q: usize) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
        }
        let sigma_thresholded = threshold_covariance(&sigma_hat, lambda, n, q);
        let a_hat = variance_correction(&sigma_thresholded)?;
        Ok(VarianceCorrection {
            sigma_hat,
            lambda,
            sigma_thresholded,
            a_hat,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TestMatrix {
    /// Symmetric statistics with a zero diagonal.
    pub t: DMatrix<f64>,
    pub a_hat: f64,
    pub axis: Axis,
}

impl TestMatrix {
    pub fn dim(&self) -> usize {
        self.t.nrows()
    }

    /// Statistics for `i < j`, row-major.
    pub fn upper(&self) -> Vec<f64> {
        let dim = self.dim();
        let mut out = Vec::with_capacity(dim * (dim.saturating_sub(1)) / 2);
        for i in 0..dim {
            for j in i + 1..dim {
                out.push(self.t[(i, j)]);
            }
        }
        out
    }
}

/// Residual correlations `r_ij / sqrt(r_ii r_jj)` with a zero diagonal.
pub fn residual_correlation(rc: &ResidualCov) -> Result<DMatrix<f64>> {
    let q = rc.r.nrows();
    for i in 0..q {
        let v = rc.r[(i, i)];
        if !(v >= MIN_RESIDUAL_VARIANCE) {
            return Err(Error::Degenerate(format!(
                "residual variance of column {i} is {v:e}"
            )));
        }
    }
    Ok(DMatrix::from_fn(q, q, |i, j| {
        if i == j {
            0.0
        } else {
            rc.r[(i, j)] / (rc.r[(i, i)] * rc.r[(j, j)]).sqrt()
        }
    }))
}

/// Assembles `T` from residual covariances. `n` is the number of observations
/// and `p` the number of row samples per observation.
pub fn test_statistics(rc: &ResidualCov, a_hat: f64, n: usize, p: usize, axis: Axis) -> Result<TestMatrix> {
    let rho = residual_correlation(rc)?;
    scale_statistics(&rho, a_hat, n, p, axis)
}

pub(crate) fn scale_statistics(rho: &DMatrix<f64>, a_hat: f64, n: usize, p: usize, axis: Axis) -> Result<TestMatrix> {
    if !(a_hat > 0.0 && a_hat.is_finite()) {
        return Err(Error::Degenerate(format!("variance correction must be positive, got {a_hat}")));
    }
    let scale = ((n - 1) as f64 * p as f64 / a_hat).sqrt();
    Ok(TestMatrix {
        t: rho * scale,
        a_hat,
        axis,
    })
}

/// Everything one axis needs: the Lasso Gram (row covariance of the axis
/// being tested) and the covariance used for the variance correction.
///
/// For the `Gamma` axis these are `Psi_hat` (`q x q`) and `Sigma_hat`
/// (`p x p`); for `Omega` the roles swap, which is the same as transposing
/// every observation.
#[derive(Debug, Clone)]
pub struct AxisProblem {
    pub axis: Axis,
    pub lasso_cov: RowCovariance,
    pub correction_cov: DMatrix<f64>,
}

impl AxisProblem {
    pub fn new(d: &Dataset, axis: Axis) -> Result<Self> {
        let (gamma, omega) = Self::pair(d)?;
        Ok(match axis {
            Axis::Gamma => gamma,
            Axis::Omega => omega,
        })
    }

    /// Both axes, sharing the two Gram matrices.
    pub fn pair(d: &Dataset) -> Result<(AxisProblem, AxisProblem)> {
        let (n, p, q) = (d.n(), d.p(), d.q());
        let psi_hat = gram_of_rows(d) / ((n - 1) * p) as f64;
        let sigma_hat = gram_of_rows(&d.transposed()) / ((n - 1) * q) as f64;
        let gamma = AxisProblem {
            axis: Axis::Gamma,
            lasso_cov: RowCovariance::from_matrix(psi_hat.clone(), n, p)?,
            correction_cov: sigma_hat.clone(),
        };
        let omega = AxisProblem {
            axis: Axis::Omega,
            lasso_cov: RowCovariance::from_matrix(sigma_hat, n, q)?,
            correction_cov: psi_hat,
        };
        Ok((gamma, omega))
    }

    pub fn n(&self) -> usize {
        self.lasso_cov.n()
    }

    /// Row samples per observation (`p` on the Gamma axis).
    pub fn rows(&self) -> usize {
        self.lasso_cov.p()
    }

    /// Number of variables tested (`q` on the Gamma axis).
    pub fn dim(&self) -> usize {
        self.lasso_cov.q()
    }

    pub fn fit(&self, cfg: &LassoConfig) -> Result<CoefficientSet> {
        fit_all(&self.lasso_cov, cfg)
    }

    pub fn correction(&self, lambda: f64) -> Result<VarianceCorrection> {
        VarianceCorrection::new(self.correction_cov.clone(), lambda, self.n(), self.dim())
    }

    pub fn statistics(&self, coeffs: &CoefficientSet, a_hat: f64) -> Result<TestMatrix> {
        let rc = residual_cov(&self.lasso_cov, coeffs)?;
        test_statistics(&rc, a_hat, self.n(), self.rows(), self.axis)
    }
}

/// Full pipeline for one axis at fixed `(lambda, delta)`.
pub fn run_axis(d: &Dataset, axis: Axis, cfg: &LassoConfig, lambda: f64) -> Result<TestMatrix> {
    let problem = AxisProblem::new(d, axis)?;
    let coeffs = problem.fit(cfg)?;
    let vc = problem.correction(lambda)?;
    problem.statistics(&coeffs, vc.a_hat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_precision, sample_dataset, GraphKind, ModelSpec};
    use crate::regression::row_covariance_of;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    #[test]
    fn column_covariance_hand_example() {
        let d = Dataset::new(vec![
            DMatrix::from_row_slice(2, 1, &[0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[2.0, 2.0]),
        ])
        .unwrap();
        let s = column_covariance(&d);
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]));
    }

    #[test]
    fn thresholding() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.43, 0.43, 2.0]);
        assert_eq!(threshold_covariance(&s, 0.0, 10, 10), s);
        let t = threshold_covariance(&s, 2.0, 10, 10);
        assert_eq!(t[(0, 1)], 0.43);
        let s2 = DMatrix::from_row_slice(2, 2, &[1.0, 0.42, 0.42, 2.0]);
        assert_eq!(threshold_covariance(&s2, 2.0, 10, 10)[(0, 1)], 0.0);
        let big = threshold_covariance(&s, 1e9, 10, 10);
        assert_eq!(big, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]));
    }

    #[test]
    fn variance_correction_values() {
        assert_eq!(variance_correction(&DMatrix::identity(5, 5)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        assert_abs_diff_eq!(variance_correction(&d).unwrap(), 10.0 / 9.0, epsilon = 1e-15);
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 2.0]);
        assert_abs_diff_eq!(
            variance_correction(&(&s * 7.5)).unwrap(),
            variance_correction(&s).unwrap(),
            epsilon = 1e-14
        );
        assert!(matches!(variance_correction(&DMatrix::zeros(2, 2)), Err(Error::Degenerate(_))));
    }

    #[test]
    fn zero_coefficients_reduce_to_row_covariance() {
        let spec = ModelSpec::new(
            gen_precision(GraphKind::band(), 6, 0).unwrap(),
            gen_precision(GraphKind::band(), 5, 0).unwrap(),
        )
        .unwrap();
        let d = sample_dataset(&spec, 4, 1).unwrap();
        let cov = row_covariance_of(&d).unwrap();
        let coeffs = CoefficientSet::from_betas(DMatrix::zeros(5, 5), 0.0).unwrap();
        let rc = residual_cov(&cov, &coeffs).unwrap();
        assert_abs_diff_eq!(&rc.r, cov.psi_hat(), epsilon = 1e-12);
    }

    #[test]
    fn statistic_scaling_and_zero_numerator() {
        let r = DMatrix::from_row_slice(3, 3, &[2.0, 0.0, 0.5, 0.0, 1.0, -0.2, 0.5, -0.2, 3.0]);
        let rc = ResidualCov { r };
        let t1 = test_statistics(&rc, 1.3, 10, 20, Axis::Gamma).unwrap();
        let t2 = test_statistics(&rc, 2.6, 10, 20, Axis::Gamma).unwrap();
        assert_eq!(t1.t[(0, 1)], 0.0);
        assert_eq!(t1.t[(1, 1)], 0.0);
        for (a, b) in t1.upper().iter().zip(t2.upper()) {
            assert_abs_diff_eq!(b, a / 2f64.sqrt(), epsilon = 1e-14);
        }
        assert_eq!(t1.t, t1.t.transpose());
        let expected = (9.0 * 20.0 / 1.3f64).sqrt() * 0.5 / 6f64.sqrt();
        assert_abs_diff_eq!(t1.t[(0, 2)], expected, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_residual_variance() {
        let rc = ResidualCov {
            r: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]),
        };
        assert!(matches!(test_statistics(&rc, 1.0, 5, 5, Axis::Gamma), Err(Error::Degenerate(_))));
    }

    #[test]
    fn omega_axis_is_gamma_axis_of_transpose() {
        let spec = ModelSpec::new(
            gen_precision(GraphKind::band(), 7, 0).unwrap(),
            gen_precision(GraphKind::hub(), 10, 0).unwrap(),
        )
        .unwrap();
        let d = sample_dataset(&spec, 6, 2).unwrap();
        let cfg = LassoConfig::default().with_delta(1.0);
        let omega = run_axis(&d, Axis::Omega, &cfg, 1.5).unwrap();
        let via_t = run_axis(&d.transposed(), Axis::Gamma, &cfg, 1.5).unwrap();
        assert_eq!(omega.dim(), 7);
        assert_abs_diff_eq!(omega.t, via_t.t, epsilon = 1e-10);
        let gamma = run_axis(&d, Axis::Gamma, &cfg, 1.5).unwrap();
        assert_eq!(gamma.dim(), 10);
    }
}
