//! Data-driven choice of the covariance threshold `lambda` and the Lasso
//! level `delta`: pick the grid cell whose statistics have tail counts closest
//! to those of a standard normal.
//!
//! Fits depend only on `delta` and the variance correction only on `lambda`,
//! so the grid costs one set of node-wise fits per `delta` and one
//! thresholding per `lambda`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::regression::LassoConfig;
use crate::teststat::{residual_correlation, residual_cov, scale_statistics, Axis, AxisProblem, TestMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningGrid {
    pub lambdas: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        let steps = vec![0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
        TuningGrid {
            lambdas: steps.clone(),
            deltas: steps,
        }
    }
}

impl TuningGrid {
    pub fn new(lambdas: Vec<f64>, deltas: Vec<f64>) -> Result<Self> {
        let grid = TuningGrid { lambdas, deltas };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.deltas.is_empty() {
            return Err(Error::Config("tuning grid must be non-empty".into()));
        }
        if self
            .lambdas
            .iter()
            .chain(&self.deltas)
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::Config("tuning grid values must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Sorted ascending with duplicates removed.
    pub fn normalized(&self) -> TuningGrid {
        let norm = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup();
            v
        };
        TuningGrid {
            lambdas: norm(&self.lambdas),
            deltas: norm(&self.deltas),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub lambda_hat: f64,
    pub delta_hat: f64,
    pub objective: f64,
    /// The grid actually scanned (normalized).
    pub grid: TuningGrid,
    /// `objective_table[d][l]` for `grid.deltas[d]`, `grid.lambdas[l]`.
    pub objective_table: Vec<Vec<f64>>,
}

/// Tuned statistics for one axis, with what the pipeline needs downstream.
#[derive(Debug, Clone)]
pub struct TunedAxis {
    pub result: TuningResult,
    pub statistics: TestMatrix,
    /// Largest KKT residual over every fit on the grid.
    pub max_kkt_residual: f64,
}

/// `Phi^-1(1 - k/20)` for `k = 3..=9`.
fn tail_thresholds() -> [f64; 7] {
    let normal = Normal::standard();
    let mut out = [0.0; 7];
    for (slot, k) in out.iter_mut().zip(3..=9) {
        *slot = normal.inverse_cdf(1.0 - k as f64 / 20.0);
    }
    out
}

/// `sum_{k=3..9} (N_k / (k (q^2 - q) / 10) - 1)^2` where `N_k` counts ordered
/// pairs `i != j` with `|T_ij| >= Phi^-1(1 - k/20)`.
pub fn ats_objective(t: &TestMatrix) -> Result<f64> {
    ats_objective_matrix(&t.t)
}

fn ats_objective_matrix(t: &DMatrix<f64>) -> Result<f64> {
    let q = t.nrows();
    if q < 5 {
        return Err(Error::Config(format!(
            "tuning needs at least 5 variables, got {q}"
        )));
    }
    let thresholds = tail_thresholds();
    let mut counts = [0usize; 7];
    for i in 0..q {
        for j in i + 1..q {
            let v = t[(i, j)].abs();
            for (c, &th) in counts.iter_mut().zip(&thresholds) {
                if v >= th {
                    *c += 2;
                }
            }
        }
    }
    let ordered = (q * q - q) as f64;
    Ok(counts
        .iter()
        .zip(3..=9)
        .map(|(&c, k)| {
            let ratio = c as f64 / (k as f64 * ordered / 10.0);
            (ratio - 1.0).powi(2)
        })
        .sum())
}

/// Grid scan for one axis of `d`.
pub fn tune(d: &Dataset, axis: Axis, grid: &TuningGrid, cfg: &LassoConfig) -> Result<TuningResult> {
    let problem = AxisProblem::new(d, axis)?;
    Ok(tune_problem(&problem, grid, cfg)?.result)
}

/// Grid scan on a prepared axis. Ties in the objective go to the smaller
/// `lambda`, then the smaller `delta`.
pub fn tune_problem(problem: &AxisProblem, grid: &TuningGrid, cfg: &LassoConfig) -> Result<TunedAxis> {
    grid.validate()?;
    let grid = grid.normalized();
    let (n, rows) = (problem.n(), problem.rows());

    let a_hats: Vec<f64> = grid
        .lambdas
        .iter()
        .map(|&lambda| problem.correction(lambda).map(|vc| vc.a_hat))
        .collect::<Result<_>>()?;

    let mut table = Vec::with_capacity(grid.deltas.len());
    let mut best: Option<(f64, usize, usize, TestMatrix)> = None;
    let mut max_kkt: f64 = 0.0;
    for (di, &delta) in grid.deltas.iter().enumerate() {
        let coeffs = problem.fit(&cfg.with_delta(delta))?;
        max_kkt = max_kkt.max(coeffs.max_kkt_residual());
        let rho = residual_correlation(&residual_cov(&problem.lasso_cov, &coeffs)?)?;
        let mut row = Vec::with_capacity(a_hats.len());
        for (li, &a_hat) in a_hats.iter().enumerate() {
            let t = scale_statistics(&rho, a_hat, n, rows, problem.axis)?;
            let obj = ats_objective(&t)?;
            row.push(obj);
            let better = match &best {
                None => true,
                Some((b_obj, b_li, b_di, _)) => {
                    obj < *b_obj || (obj == *b_obj && (li, di) < (*b_li, *b_di))
                }
            };
            if better {
                best = Some((obj, li, di, t));
            }
        }
        table.push(row);
    }
    let (objective, li, di, statistics) = best.expect("grid is non-empty");
    Ok(TunedAxis {
        result: TuningResult {
            lambda_hat: grid.lambdas[li],
            delta_hat: grid.deltas[di],
            objective,
            grid,
            objective_table: table,
        },
        statistics,
        max_kkt_residual: max_kkt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_precision, sample_dataset, GraphKind, ModelSpec};
    use crate::teststat::run_axis;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn tm(t: DMatrix<f64>) -> TestMatrix {
        TestMatrix { t, a_hat: 1.0, axis: Axis::Gamma }
    }

    #[test]
    fn zero_statistics_give_seven() {
        assert_eq!(ats_objective(&tm(DMatrix::zeros(6, 6))).unwrap(), 7.0);
    }

    #[test]
    fn saturated_statistics() {
        let t = DMatrix::from_fn(8, 8, |i, j| if i == j { 0.0 } else { 1e6 });
        let expected: f64 = (3..=9).map(|k| (10.0 / k as f64 - 1.0).powi(2)).sum();
        assert!((ats_objective(&tm(t)).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 596773.0 / 63504.0).abs() < 1e-12);
    }

    #[test]
    fn gaussian_statistics_score_low() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let q = 200;
        let mut t = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in i + 1..q {
                let v: f64 = StandardNormal.sample(&mut rng);
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }
        assert!(ats_objective(&tm(t)).unwrap() < 0.05);
    }

    #[test]
    fn too_few_variables() {
        assert!(ats_objective(&tm(DMatrix::zeros(4, 4))).is_err());
    }

    #[test]
    fn objective_invariant_under_relabeling() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let q = 12;
        let mut t = DMatrix::zeros(q, q);
        for i in 0..q {
            for j in i + 1..q {
                let z: f64 = StandardNormal.sample(&mut rng);
                let v = 1.5 * z;
                t[(i, j)] = v;
                t[(j, i)] = v;
            }
        }
        let perm: Vec<usize> = (0..q).map(|i| (i * 5 + 3) % q).collect();
        let permuted = DMatrix::from_fn(q, q, |i, j| t[(perm[i], perm[j])]);
        assert_eq!(ats_objective(&tm(t)).unwrap(), ats_objective(&tm(permuted)).unwrap());
    }

    fn small_dataset() -> Dataset {
        let spec = ModelSpec::new(
            gen_precision(GraphKind::hub(), 20, 0).unwrap(),
            gen_precision(GraphKind::band(), 15, 0).unwrap(),
        )
        .unwrap();
        sample_dataset(&spec, 8, 4).unwrap()
    }

    #[test]
    fn singleton_and_duplicate_grids() {
        let d = small_dataset();
        let cfg = LassoConfig::default();
        let single = TuningGrid::new(vec![1.5], vec![2.0]).unwrap();
        let r = tune(&d, Axis::Gamma, &single, &cfg).unwrap();
        assert_eq!((r.lambda_hat, r.delta_hat), (1.5, 2.0));
        assert_eq!(r.objective, r.objective_table[0][0]);

        let grid = TuningGrid::new(vec![1.0, 2.0, 3.0], vec![0.5, 1.5]).unwrap();
        let dup = TuningGrid::new(vec![3.0, 1.0, 2.0, 1.0], vec![1.5, 0.5, 1.5]).unwrap();
        let a = tune(&d, Axis::Gamma, &grid, &cfg).unwrap();
        let b = tune(&d, Axis::Gamma, &dup, &cfg).unwrap();
        assert_eq!(a, b);
        let min = a.objective_table.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(a.objective, min);
    }

    #[test]
    fn cached_path_matches_scratch() {
        let d = small_dataset();
        let cfg = LassoConfig::default();
        let grid = TuningGrid::new(vec![0.5, 2.0], vec![1.0, 2.5]).unwrap();
        for axis in [Axis::Gamma, Axis::Omega] {
            let problem = AxisProblem::new(&d, axis).unwrap();
            let tuned = tune_problem(&problem, &grid, &cfg).unwrap();
            let scratch = run_axis(&d, axis, &cfg.with_delta(tuned.result.delta_hat), tuned.result.lambda_hat).unwrap();
            assert!((&tuned.statistics.t - &scratch.t).amax() <= 1e-12);
        }
    }

    #[test]
    fn empty_grid_rejected() {
        assert!(TuningGrid::new(vec![], vec![1.0]).is_err());
        assert!(TuningGrid::new(vec![1.0], vec![-1.0]).is_err());
    }
}
