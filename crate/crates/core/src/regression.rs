//! Node-wise Lasso regressions on the `np` row samples of a matrix-variate
//! dataset.
//!
//! Each row of each centered observation is a `q`-dimensional sample. The
//! samples are correlated across rows, but the Lasso only needs their Gram
//! matrix, so every fit runs on `Psi_hat` after a single pass over the data.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

/// The row samples arranged as the columns of a `q x np` matrix `Z`.
///
/// Column `k * p + l` holds `(X^(k)_{l,.} - X_bar_{l,.})'`.
#[derive(Debug, Clone)]
pub struct RowView {
    z: DMatrix<f64>,
    n: usize,
    p: usize,
}

impl RowView {
    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.z.nrows()
    }
}

pub fn extract_row_samples(d: &Dataset) -> RowView {
    let (n, p, q) = (d.n(), d.p(), d.q());
    let mut z = DMatrix::zeros(q, n * p);
    for k in 0..n {
        let c = d.centered(k);
        for l in 0..p {
            for j in 0..q {
                z[(j, k * p + l)] = c[(l, j)];
            }
        }
    }
    RowView { z, n, p }
}

/// `Psi_hat = Z Z' / ((n - 1) p)` together with the sample layout it came from.
#[derive(Debug, Clone)]
pub struct RowCovariance {
    psi_hat: DMatrix<f64>,
    n: usize,
    p: usize,
}

impl RowCovariance {
    /// Wraps an already-normalized row covariance. Fails if any diagonal entry
    /// is zero, since the Lasso scaling `D_j` would be undefined.
    pub fn from_matrix(psi_hat: DMatrix<f64>, n: usize, p: usize) -> Result<Self> {
        let q = psi_hat.nrows();
        if psi_hat.ncols() != q {
            return Err(Error::Dimension("row covariance must be square".into()));
        }
        let max_diag = (0..q).map(|j| psi_hat[(j, j)]).fold(0.0, f64::max);
        for j in 0..q {
            let v = psi_hat[(j, j)];
            if !(v > f64::EPSILON * max_diag) || !v.is_finite() {
                return Err(Error::Degenerate(format!(
                    "column {j} has zero sample variance"
                )));
            }
        }
        Ok(RowCovariance { psi_hat, n, p })
    }

    pub fn psi_hat(&self) -> &DMatrix<f64> {
        &self.psi_hat
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of row samples contributed by each observation.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.psi_hat.nrows()
    }

    /// Lasso scalings: `D_j` is the diagonal of `Psi_hat` with entry `j` removed.
    pub fn scaling(&self, j: usize) -> Vec<f64> {
        (0..self.q())
            .filter(|&m| m != j)
            .map(|m| self.psi_hat[(m, m)])
            .collect()
    }
}

pub fn row_covariance(v: &RowView) -> Result<RowCovariance> {
    let psi = &v.z * v.z.transpose() / ((v.n - 1) * v.p) as f64;
    RowCovariance::from_matrix(psi, v.n, v.p)
}

/// `sum_k C_k' C_k` for centered observations `C_k`.
pub(crate) fn gram_of_rows(d: &Dataset) -> DMatrix<f64> {
    let q = d.q();
    let mut acc = DMatrix::zeros(q, q);
    for k in 0..d.n() {
        let c = d.centered(k);
        acc.gemm_tr(1.0, &c, &c, 1.0);
    }
    symmetrize_in_place(&mut acc);
    acc
}

fn symmetrize_in_place(m: &mut DMatrix<f64>) {
    let dim = m.nrows();
    for i in 0..dim {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Row covariance computed directly from the observations without forming `Z`.
pub fn row_covariance_of(d: &Dataset) -> Result<RowCovariance> {
    let psi = gram_of_rows(d) / ((d.n() - 1) * d.p()) as f64;
    RowCovariance::from_matrix(psi, d.n(), d.p())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LassoConfig {
    pub delta: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
    #[serde(default = "default_kkt_tol")]
    pub kkt_tol: f64,
    #[serde(default = "default_coord_tol")]
    pub coord_tol: f64,
}

fn default_max_sweeps() -> usize {
    10_000
}

fn default_kkt_tol() -> f64 {
    1e-6
}

fn default_coord_tol() -> f64 {
    1e-7
}

impl Default for LassoConfig {
    fn default() -> Self {
        LassoConfig {
            delta: 2.0,
            max_sweeps: default_max_sweeps(),
            kkt_tol: default_kkt_tol(),
            coord_tol: default_coord_tol(),
        }
    }
}

impl LassoConfig {
    pub fn with_delta(self, delta: f64) -> Self {
        LassoConfig { delta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta.is_finite() && self.delta >= 0.0) {
            return Err(Error::Config(format!("delta must be >= 0, got {}", self.delta)));
        }
        if !(self.kkt_tol > 0.0 && self.coord_tol > 0.0) {
            return Err(Error::Config("lasso tolerances must be positive".into()));
        }
        if self.max_sweeps == 0 {
            return Err(Error::Config("max_sweeps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Penalty `theta_nj = delta * sqrt(psi_jj * log max(q, np) / (np))`.
pub fn penalty(cov: &RowCovariance, j: usize, delta: f64) -> f64 {
    let np = (cov.n() * cov.p()) as f64;
    let q = cov.q() as f64;
    delta * (cov.psi_hat[(j, j)] * q.max(np).ln() / np).sqrt()
}

/// A Lasso coefficient vector for target column `target`, addressed by the
/// original column index. The target's own slot is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientVector {
    target: usize,
    values: DVector<f64>,
}

impl CoefficientVector {
    pub fn new(target: usize, values: DVector<f64>) -> Result<Self> {
        if target >= values.len() {
            return Err(Error::Dimension(format!(
                "target {target} out of range for {} columns",
                values.len()
            )));
        }
        if values[target] != 0.0 {
            return Err(Error::Config("target slot of a coefficient vector must be zero".into()));
        }
        Ok(CoefficientVector { target, values })
    }

    pub fn target(&self) -> usize {
        self.target
    }

    /// Coefficient on covariate column `col`.
    pub fn get(&self, col: usize) -> f64 {
        self.values[col]
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    /// The coefficient vector with covariate `i` forced to zero. For
    /// `i == target` the vector is returned unchanged.
    pub fn zero_component(&self, i: usize) -> Result<CoefficientVector> {
        if i >= self.values.len() {
            return Err(Error::Dimension(format!(
                "column {i} out of range for {} columns",
                self.values.len()
            )));
        }
        let mut out = self.clone();
        out.values[i] = 0.0;
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct LassoFit {
    pub beta: CoefficientVector,
    /// Coefficients of the scaled problem, `alpha_m = sqrt(D_m) beta_m`.
    pub alpha: DVector<f64>,
    pub penalty: f64,
    pub kkt_residual: f64,
    pub sweeps: usize,
    /// Scaled objective after each sweep.
    pub objective_trace: Vec<f64>,
}

/// Fits the scaled Lasso for target column `j` by cyclic coordinate descent on
/// the Gram form of the problem:
///
/// `min_a 1/(2np) |y - X D^-1/2 a|^2 + theta |a|_1`, returning `beta = D^-1/2 a`.
///
/// The smooth part only involves `X'X / np` and `X'y / np`, which are
/// `(n-1)/n` times the matching entries of `Psi_hat`.
pub fn lasso_fit(cov: &RowCovariance, j: usize, cfg: &LassoConfig) -> Result<LassoFit> {
    cfg.validate()?;
    let q = cov.q();
    if j >= q {
        return Err(Error::Dimension(format!("target column {j} out of range for q = {q}")));
    }
    let psi = &cov.psi_hat;
    let ratio = (cov.n() - 1) as f64 / cov.n() as f64;
    let sd: Vec<f64> = (0..q).map(|m| psi[(m, m)].sqrt()).collect();
    let gram = |a: usize, b: usize| ratio * psi[(a, b)] / (sd[a] * sd[b]);
    let theta = penalty(cov, j, cfg.delta);
    let yy = ratio * psi[(j, j)];

    // c_m = x_m'y / np, r = c - G alpha (negative smooth gradient).
    let c: Vec<f64> = (0..q)
        .map(|m| if m == j { 0.0 } else { ratio * psi[(m, j)] / sd[m] })
        .collect();
    let mut r = c.clone();
    let mut alpha = vec![0.0; q];
    let objective = |alpha: &[f64], r: &[f64]| {
        let mut quad = 0.0;
        let mut l1 = 0.0;
        for m in 0..q {
            quad += alpha[m] * (c[m] + r[m]);
            l1 += alpha[m].abs();
        }
        0.5 * yy - 0.5 * quad + theta * l1
    };
    let kkt = |alpha: &[f64], r: &[f64]| {
        let mut worst: f64 = 0.0;
        for m in 0..q {
            if m == j {
                continue;
            }
            let v = if alpha[m] == 0.0 {
                (r[m].abs() - theta).max(0.0)
            } else {
                (r[m] - theta * alpha[m].signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    };

    let mut trace = Vec::new();
    let mut kkt_residual = kkt(&alpha, &r);
    let mut sweeps = 0;
    while sweeps < cfg.max_sweeps {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for m in 0..q {
            if m == j {
                continue;
            }
            let g_mm = ratio;
            let old = alpha[m];
            let z = r[m] + g_mm * old;
            let new = soft_threshold(z, theta) / g_mm;
            if new != old {
                let step = new - old;
                for (k, rk) in r.iter_mut().enumerate() {
                    if k != j {
                        *rk -= gram(k, m) * step;
                    }
                }
                alpha[m] = new;
                max_change = max_change.max(step.abs());
            }
        }
        trace.push(objective(&alpha, &r));
        if max_change < cfg.coord_tol {
            kkt_residual = kkt(&alpha, &r);
            if kkt_residual < cfg.kkt_tol {
                break;
            }
        }
    }
    if !(kkt_residual < cfg.kkt_tol) {
        kkt_residual = kkt(&alpha, &r);
        if !(kkt_residual < cfg.kkt_tol) {
            return Err(Error::NonConvergence {
                column: j,
                sweeps,
                kkt_residual,
            });
        }
    }

    let beta = DVector::from_fn(q, |m, _| if m == j { 0.0 } else { alpha[m] / sd[m] });
    let alpha = DVector::from_iterator(q - 1, (0..q).filter(|&m| m != j).map(|m| alpha[m]));
    Ok(LassoFit {
        beta: CoefficientVector { target: j, values: beta },
        alpha,
        penalty: theta,
        kkt_residual,
        sweeps,
        objective_trace: trace,
    })
}

#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// All `q` node-wise fits for one `delta`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    /// Column `j` holds `beta_j`, indexed by covariate column; the diagonal is zero.
    betas: DMatrix<f64>,
    pub penalties: Vec<f64>,
    pub kkt_residuals: Vec<f64>,
    pub delta: f64,
}

impl CoefficientSet {
    pub fn q(&self) -> usize {
        self.betas.nrows()
    }

    /// `betas()[(m, j)]` is the coefficient on covariate `m` in the regression
    /// of column `j`.
    pub fn betas(&self) -> &DMatrix<f64> {
        &self.betas
    }

    pub fn beta(&self, j: usize) -> CoefficientVector {
        CoefficientVector {
            target: j,
            values: self.betas.column(j).into_owned(),
        }
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.kkt_residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Builds a set from explicit coefficient columns (diagonal must be zero).
    pub fn from_betas(betas: DMatrix<f64>, delta: f64) -> Result<Self> {
        let q = betas.nrows();
        if betas.ncols() != q {
            return Err(Error::Dimension("coefficient matrix must be square".into()));
        }
        if (0..q).any(|j| betas[(j, j)] != 0.0) {
            return Err(Error::Config("coefficient matrix must have a zero diagonal".into()));
        }
        Ok(CoefficientSet {
            betas,
            penalties: vec![0.0; q],
            kkt_residuals: vec![0.0; q],
            delta,
        })
    }
}

/// Runs every node-wise fit in parallel; the result does not depend on
/// scheduling.
pub fn fit_all(cov: &RowCovariance, cfg: &LassoConfig) -> Result<CoefficientSet> {
    let q = cov.q();
    let fits: Vec<LassoFit> = (0..q)
        .into_par_iter()
        .map(|j| lasso_fit(cov, j, cfg))
        .collect::<Result<_>>()?;
    let mut betas = DMatrix::zeros(q, q);
    let mut penalties = Vec::with_capacity(q);
    let mut kkt_residuals = Vec::with_capacity(q);
    for (j, fit) in fits.into_iter().enumerate() {
        betas.set_column(j, fit.beta.values());
        penalties.push(fit.penalty);
        kkt_residuals.push(fit.kkt_residual);
    }
    Ok(CoefficientSet {
        betas,
        penalties,
        kkt_residuals,
        delta: cfg.delta,
    })
}
