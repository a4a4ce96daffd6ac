//! Support estimation on observed data, without ground truth.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::fdr::{bh_select, choose_alpha_for_target, joint_metrics, p_values, support_estimate, AlphaChoice, JointMetrics};
use crate::model::Dataset;
use crate::regression::LassoConfig;
use crate::teststat::AxisProblem;
use crate::tuning::{tune_problem, TuningGrid, TuningResult};

use super::simulate::{EdgeTable, EdgeTables};

/// Per-axis levels scanned in target mode: 0.001, 0.002, ..., 0.5.
pub fn default_alpha_grid() -> Vec<f64> {
    (1..=500).map(|k| k as f64 / 1000.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaMode {
    /// Run BH on both axes at this level.
    PerAxis(f64),
    /// Pick the per-axis level whose `alpha_prime` is closest to the target.
    TargetAlphaPrime(f64),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuningSummary {
    pub gamma: TuningResult,
    pub omega: TuningResult,
    pub max_kkt_residual: f64,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub tuning: TuningSummary,
    pub metrics: JointMetrics,
    pub alpha_choice: Option<AlphaChoice>,
    pub edges: EdgeTables,
}

/// Tunes both axes of `d` on `grid`.
pub fn tune_both(d: &Dataset, grid: &TuningGrid, lasso: &LassoConfig) -> Result<(TuningSummary, EdgeTables)> {
    let (gamma_problem, omega_problem) = AxisProblem::pair(d)?;
    let gamma = tune_problem(&gamma_problem, grid, lasso)?;
    let omega = tune_problem(&omega_problem, grid, lasso)?;
    let table = |statistics: crate::teststat::TestMatrix| -> Result<EdgeTable> {
        let p_values = p_values(&statistics)?;
        let selection = bh_select(&p_values, 0.5)?;
        Ok(EdgeTable {
            statistics,
            p_values,
            selection,
        })
    };
    let summary = TuningSummary {
        gamma: gamma.result,
        omega: omega.result,
        max_kkt_residual: gamma.max_kkt_residual.max(omega.max_kkt_residual),
    };
    Ok((
        summary,
        EdgeTables {
            gamma: table(gamma.statistics)?,
            omega: table(omega.statistics)?,
        },
    ))
}

pub fn estimate(d: &Dataset, grid: &TuningGrid, lasso: &LassoConfig, mode: AlphaMode) -> Result<EstimateResult> {
    let (tuning, mut edges) = tune_both(d, grid, lasso)?;
    let (p, q) = (d.p(), d.q());
    let (alpha, alpha_choice) = match mode {
        AlphaMode::PerAxis(alpha) => (alpha, None),
        AlphaMode::TargetAlphaPrime(target) => {
            let choice = choose_alpha_for_target(target, p, q, &default_alpha_grid(), |alpha| {
                let a = bh_select(&edges.omega.p_values, alpha)?.rejected.len() * 2;
                let b = bh_select(&edges.gamma.p_values, alpha)?.rejected.len() * 2;
                Ok((a, b))
            })?;
            (choice.alpha, Some(choice))
        }
    };
    edges.gamma.selection = bh_select(&edges.gamma.p_values, alpha)?;
    edges.omega.selection = bh_select(&edges.omega.p_values, alpha)?;
    let omega_est = support_estimate(&edges.omega.selection, p)?;
    let gamma_est = support_estimate(&edges.gamma.selection, q)?;
    let metrics = joint_metrics(&omega_est, &gamma_est, None, alpha)?;
    Ok(EstimateResult {
        tuning,
        metrics,
        alpha_choice,
        edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_precision, sample_dataset, GraphKind, ModelSpec};

    fn data() -> Dataset {
        let spec = ModelSpec::new(
            gen_precision(GraphKind::band(), 12, 0).unwrap(),
            gen_precision(GraphKind::band(), 10, 1).unwrap(),
        )
        .unwrap();
        sample_dataset(&spec, 30, 2).unwrap()
    }

    #[test]
    fn per_axis_and_target_modes() {
        let d = data();
        let grid = TuningGrid::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap();
        let lasso = LassoConfig::default();
        let direct = estimate(&d, &grid, &lasso, AlphaMode::PerAxis(0.1)).unwrap();
        assert_eq!(direct.metrics.alpha, 0.1);
        assert!(direct.metrics.fdp_joint.is_none());
        assert_eq!(direct.edges.gamma.p_values.m(), 45);
        assert_eq!(direct.metrics.b, 2 * direct.edges.gamma.selection.rejected.len());

        let target = estimate(&d, &grid, &lasso, AlphaMode::TargetAlphaPrime(0.1)).unwrap();
        let choice = target.alpha_choice.unwrap();
        assert_eq!(target.metrics.alpha, choice.alpha);
        assert_eq!((target.metrics.a, target.metrics.b), (choice.a, choice.b));
    }
}
