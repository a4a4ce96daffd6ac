//! Matrix-normal model: graph-structured precision matrices, the Kronecker
//! covariance they induce, and seeded dataset sampling.
//!
//! A `p x q` observation `X` follows `vec(X') ~ N(vec(mu'), Sigma (x) Psi)`,
//! where `Sigma = Omega^-1` couples rows and `Psi = Gamma^-1` couples columns.
//! Conditional independence between entries is read off the supports of
//! `Omega` and `Gamma`.

use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::Mask;

/// Symmetry tolerance for precision matrices.
const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraphFamily {
    Hub,
    Band,
    Random,
}

/// Graph family plus the signal-strength divisor `factor` applied to every
/// off-diagonal precision entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphKind {
    pub kind: GraphFamily,
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// Upper bound on the Erdos-Renyi edge probability; the probability used
    /// is `min(edge_prob_cap, 5 / dim)`.
    #[serde(default = "default_edge_prob_cap")]
    pub edge_prob_cap: f64,
}

fn default_factor() -> f64 {
    1.0
}

fn default_edge_prob_cap() -> f64 {
    0.05
}

impl GraphKind {
    pub fn new(kind: GraphFamily) -> Self {
        GraphKind {
            kind,
            factor: default_factor(),
            edge_prob_cap: default_edge_prob_cap(),
        }
    }

    pub fn hub() -> Self {
        Self::new(GraphFamily::Hub)
    }

    pub fn band() -> Self {
        Self::new(GraphFamily::Band)
    }

    pub fn random() -> Self {
        Self::new(GraphFamily::Random)
    }

    pub fn with_factor(mut self, factor: f64) -> Self {
        self.factor = factor;
        self
    }
}

/// Symmetric positive-definite matrix with its exact support.
#[derive(Debug, Clone)]
pub struct PrecisionMatrix {
    entries: DMatrix<f64>,
    support: Mask,
}

impl PrecisionMatrix {
    /// Validates symmetry and positive definiteness. The support is the set of
    /// exactly nonzero entries.
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        let dim = entries.nrows();
        if dim == 0 || entries.ncols() != dim {
            return Err(Error::Dimension(format!(
                "precision matrix must be square and non-empty, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Degenerate("precision matrix has non-finite entries".into()));
        }
        for i in 0..dim {
            for j in 0..i {
                if (entries[(i, j)] - entries[(j, i)]).abs() > SYMMETRY_TOL {
                    return Err(Error::Degenerate(format!(
                        "precision matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        if Cholesky::new(entries.clone()).is_none() {
            return Err(Error::Degenerate(
                "precision matrix is not positive definite".into(),
            ));
        }
        let support = Mask::from_fn(dim, |i, j| entries[(i, j)].abs() > 0.0);
        Ok(PrecisionMatrix { entries, support })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    /// Exact nonzero pattern, diagonal included.
    pub fn support(&self) -> &Mask {
        &self.support
    }

    pub fn covariance(&self) -> Result<DMatrix<f64>> {
        invert_spd(&self.entries)
    }
}

/// Builds the precision matrix of one of the three graph families.
///
/// Hub: `dim / 10` blocks of ten nodes, the first node of each block linked to
/// the other nine with weight `0.5 / f`; rows past the last full block keep only
/// the diagonal. Band: `0.6 / f` on the first off-diagonal and `0.3 / f` on the
/// second. Random: each unordered pair is an edge with probability
/// `min(cap, 5 / dim)` and weight `U(0.4 / f, 0.8 / f)`. Hub and random are made
/// positive definite by adding `(|lambda_min| + 0.05) I`.
pub fn gen_precision(kind: GraphKind, dim: usize, seed: u64) -> Result<PrecisionMatrix> {
    if dim < 3 {
        return Err(Error::Config(format!("graph dimension must be >= 3, got {dim}")));
    }
    if !(kind.factor.is_finite() && kind.factor > 0.0) {
        return Err(Error::Config(format!(
            "signal-strength factor must be positive, got {}",
            kind.factor
        )));
    }
    let f = kind.factor;
    let mut m = DMatrix::<f64>::identity(dim, dim);
    match kind.kind {
        GraphFamily::Hub => {
            for block in 0..dim / 10 {
                let hub = 10 * block;
                for j in hub + 1..hub + 10 {
                    m[(hub, j)] = 0.5 / f;
                    m[(j, hub)] = 0.5 / f;
                }
            }
        }
        GraphFamily::Band => {
            for i in 0..dim {
                if i + 1 < dim {
                    m[(i, i + 1)] = 0.6 / f;
                    m[(i + 1, i)] = 0.6 / f;
                }
                if i + 2 < dim {
                    m[(i, i + 2)] = 0.3 / f;
                    m[(i + 2, i)] = 0.3 / f;
                }
            }
        }
        GraphFamily::Random => {
            if !(kind.edge_prob_cap > 0.0 && kind.edge_prob_cap <= 1.0) {
                return Err(Error::Config(format!(
                    "edge probability cap must lie in (0, 1], got {}",
                    kind.edge_prob_cap
                )));
            }
            let prob = kind.edge_prob_cap.min(5.0 / dim as f64);
            let (lo, hi) = (0.4 / f, 0.8 / f);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            for i in 0..dim {
                for j in i + 1..dim {
                    // Both draws always happen so the stream does not depend
                    // on which pairs become edges.
                    let edge = rng.random::<f64>() < prob;
                    let weight = lo + (hi - lo) * rng.random::<f64>();
                    if edge {
                        m[(i, j)] = weight;
                        m[(j, i)] = weight;
                    }
                }
            }
        }
    }
    if kind.kind != GraphFamily::Band {
        let lambda_min = min_eigenvalue(&m);
        let shift = lambda_min.abs() + 0.05;
        for i in 0..dim {
            m[(i, i)] += shift;
        }
    }
    PrecisionMatrix::new(m)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky
/// factor. The result is symmetrized.
pub fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = Cholesky::new(m.clone())
        .ok_or_else(|| Error::Degenerate("Cholesky factorization failed: matrix is not positive definite".into()))?;
    let inv = chol.inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// Full matrix-normal model used for sampling and evaluation.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub omega: PrecisionMatrix,
    pub gamma: PrecisionMatrix,
    pub sigma: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub mu: DMatrix<f64>,
    /// Perturbation level: when positive the sampling covariance is
    /// `Sigma (x) Psi + nu I`.
    pub nu: f64,
    chol_sigma: DMatrix<f64>,
    chol_psi: DMatrix<f64>,
}

impl ModelSpec {
    pub fn new(omega: PrecisionMatrix, gamma: PrecisionMatrix) -> Result<Self> {
        let sigma = omega.covariance()?;
        let psi = gamma.covariance()?;
        let chol_sigma = lower_cholesky(&sigma)?;
        let chol_psi = lower_cholesky(&psi)?;
        let mu = DMatrix::zeros(omega.dim(), gamma.dim());
        Ok(ModelSpec {
            omega,
            gamma,
            sigma,
            psi,
            mu,
            nu: 0.0,
            chol_sigma,
            chol_psi,
        })
    }

    /// Model from row and column covariances instead of precisions.
    pub fn from_covariances(sigma: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self> {
        let omega = PrecisionMatrix::new(symmetrize(invert_spd(&sigma)?))?;
        let gamma = PrecisionMatrix::new(symmetrize(invert_spd(&psi)?))?;
        let chol_sigma = lower_cholesky(&sigma)?;
        let chol_psi = lower_cholesky(&psi)?;
        let mu = DMatrix::zeros(sigma.nrows(), psi.nrows());
        Ok(ModelSpec {
            omega,
            gamma,
            sigma,
            psi,
            mu,
            nu: 0.0,
            chol_sigma,
            chol_psi,
        })
    }

    pub fn with_mean(mut self, mu: DMatrix<f64>) -> Result<Self> {
        if mu.shape() != (self.p(), self.q()) {
            return Err(Error::Dimension(format!(
                "mean must be {}x{}, got {}x{}",
                self.p(),
                self.q(),
                mu.nrows(),
                mu.ncols()
            )));
        }
        self.mu = mu;
        Ok(self)
    }

    pub fn with_perturbation(mut self, nu: f64) -> Result<Self> {
        if !(nu.is_finite() && nu >= 0.0) {
            return Err(Error::Config(format!("perturbation must be >= 0, got {nu}")));
        }
        self.nu = nu;
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn q(&self) -> usize {
        self.psi.nrows()
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

fn lower_cholesky(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))
}

/// `n` observations of a `p x q` matrix with the entrywise sample mean.
#[derive(Debug, Clone)]
pub struct Dataset {
    samples: Vec<DMatrix<f64>>,
    mean_hat: DMatrix<f64>,
}

impl Dataset {
    pub fn new(samples: Vec<DMatrix<f64>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Data(format!(
                "at least two observations are required, got {}",
                samples.len()
            )));
        }
        let (p, q) = samples[0].shape();
        if p == 0 || q == 0 {
            return Err(Error::Data("observations must be non-empty matrices".into()));
        }
        for (k, s) in samples.iter().enumerate() {
            if s.shape() != (p, q) {
                return Err(Error::Data(format!(
                    "observation {k} is {}x{}, expected {p}x{q}",
                    s.nrows(),
                    s.ncols()
                )));
            }
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("observation {k} has non-finite entries")));
            }
        }
        let mut mean_hat = DMatrix::zeros(p, q);
        for s in &samples {
            mean_hat += s;
        }
        mean_hat /= samples.len() as f64;
        Ok(Dataset { samples, mean_hat })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn p(&self) -> usize {
        self.mean_hat.nrows()
    }

    pub fn q(&self) -> usize {
        self.mean_hat.ncols()
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn mean_hat(&self) -> &DMatrix<f64> {
        &self.mean_hat
    }

    /// `X^(k) - X_bar`.
    pub fn centered(&self, k: usize) -> DMatrix<f64> {
        &self.samples[k] - &self.mean_hat
    }

    /// Dataset of transposed observations; swaps the roles of rows and columns.
    pub fn transposed(&self) -> Dataset {
        Dataset {
            samples: self.samples.iter().map(|s| s.transpose()).collect(),
            mean_hat: self.mean_hat.transpose(),
        }
    }
}

/// Draws `n` observations. With `nu = 0` each one is `mu + L_Sigma G L_Psi'`
/// for a `p x q` matrix `G` of independent standard normals; with `nu > 0`
/// independent `N(0, nu)` noise is added entrywise, which gives covariance
/// `Sigma (x) Psi + nu I` without forming the `pq x pq` matrix.
pub fn sample_dataset(spec: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::Config(format!("sample size must be >= 2, got {n}")));
    }
    let (p, q) = (spec.p(), spec.q());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let noise_scale = spec.nu.sqrt();
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let g = DMatrix::<f64>::from_fn(p, q, |_, _| rng.sample(StandardNormal));
        let mut x = &spec.chol_sigma * g * spec.chol_psi.transpose();
        if spec.nu > 0.0 {
            for v in x.iter_mut() {
                let e: f64 = rng.sample(StandardNormal);
                *v += noise_scale * e;
            }
        }
        x += &spec.mu;
        samples.push(x);
    }
    Dataset::new(samples)
}

/// Partial correlations `-g_ij / sqrt(g_ii g_jj)` with unit diagonal.
pub fn true_partial_corr(g: &PrecisionMatrix) -> DMatrix<f64> {
    let e = g.entries();
    let dim = g.dim();
    DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            1.0
        } else {
            -e[(i, j)] / (e[(i, i)] * e[(j, j)]).sqrt()
        }
    })
}

/// Partial correlation between `X_ij` and `X_kl` under the Kronecker model.
///
/// The column factor is normalized by `gamma_jj` and `gamma_ll`.
pub fn joint_partial_corr(
    omega: &PrecisionMatrix,
    gamma: &PrecisionMatrix,
    i: usize,
    k: usize,
    j: usize,
    l: usize,
) -> Result<f64> {
    let (p, q) = (omega.dim(), gamma.dim());
    if i >= p || k >= p || j >= q || l >= q {
        return Err(Error::Dimension(format!(
            "index out of range: ({i},{j}),({k},{l}) for a {p}x{q} model"
        )));
    }
    if i == k && j == l {
        return Err(Error::Config("partial correlation of an entry with itself".into()));
    }
    let w = omega.entries();
    let g = gamma.entries();
    let row = w[(i, k)] / (w[(i, i)] * w[(k, k)]).sqrt();
    let col = g[(j, l)] / (g[(j, j)] * g[(l, l)]).sqrt();
    Ok(-row * col)
}
