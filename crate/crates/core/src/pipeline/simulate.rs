//! Seeded replication engine for simulation studies and ROC sweeps.

use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdr::{bh_select, joint_metrics, p_values, support_estimate, BhSelection, PValueSet};
use crate::model::{gen_precision, sample_dataset, ModelSpec};
use crate::pipeline::config::SimConfig;
use crate::teststat::{AxisProblem, TestMatrix};
use crate::tuning::{tune_problem, TunedAxis};

/// Identifier of the random number generator, recorded in every summary.
pub const RNG_ALGORITHM: &str =
    "ChaCha20 (rand_chacha 0.9, seed_from_u64); replication seed = seed XOR r; \
     sub-streams via splitmix64(seed_r + tag) for omega (1), gamma (2), data (3)";

/// Seed of replication `r`.
pub fn replication_seed(seed: u64, r: usize) -> u64 {
    seed ^ r as u64
}

/// Decorrelated sub-seed for one component of a replication.
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed.wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub seed: u64,
    pub a: usize,
    pub b: usize,
    pub a0: usize,
    pub b0: usize,
    pub fdp_omega: f64,
    pub fdp_gamma: f64,
    pub fdp_joint: f64,
    pub alpha_prime: f64,
    pub power: f64,
    pub lambda_gamma: f64,
    pub delta_gamma: f64,
    pub lambda_omega: f64,
    pub delta_omega: f64,
    /// Variance correction of the Gamma axis.
    pub a_hat: f64,
    /// Variance correction of the Omega axis.
    pub b_hat: f64,
    pub max_kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub replication: usize,
    pub seed: u64,
    pub error: String,
}

/// Per-pair output for one axis.
#[derive(Debug, Clone)]
pub struct EdgeTable {
    pub statistics: TestMatrix,
    pub p_values: PValueSet,
    pub selection: BhSelection,
}

#[derive(Debug, Clone)]
pub struct EdgeTables {
    pub gamma: EdgeTable,
    pub omega: EdgeTable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
}

impl Summary {
    /// Mean and sample standard deviation (zero for a single value).
    pub fn of(values: impl IntoIterator<Item = f64>) -> Summary {
        let values: Vec<f64> = values.into_iter().collect();
        if values.is_empty() {
            return Summary { mean: 0.0, sd: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Summary { mean, sd }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub replications: usize,
    pub fdp_joint: Summary,
    pub alpha_prime: Summary,
    pub power: Summary,
    pub fdp_omega: Summary,
    pub fdp_gamma: Summary,
    pub a: Summary,
    pub b: Summary,
    pub max_kkt_residual: f64,
}

impl Aggregates {
    pub fn from_records(records: &[ReplicationRecord]) -> Aggregates {
        let col = |f: fn(&ReplicationRecord) -> f64| Summary::of(records.iter().map(f));
        Aggregates {
            replications: records.len(),
            fdp_joint: col(|r| r.fdp_joint),
            alpha_prime: col(|r| r.alpha_prime),
            power: col(|r| r.power),
            fdp_omega: col(|r| r.fdp_omega),
            fdp_gamma: col(|r| r.fdp_gamma),
            a: col(|r| r.a as f64),
            b: col(|r| r.b as f64),
            max_kkt_residual: records.iter().map(|r| r.max_kkt_residual).fold(0.0, f64::max),
        }
    }

    /// Largest absolute difference between two sets of aggregates.
    pub fn max_abs_diff(&self, other: &Aggregates) -> f64 {
        let pairs = [
            (self.fdp_joint, other.fdp_joint),
            (self.alpha_prime, other.alpha_prime),
            (self.power, other.power),
            (self.fdp_omega, other.fdp_omega),
            (self.fdp_gamma, other.fdp_gamma),
            (self.a, other.a),
            (self.b, other.b),
        ];
        let mut worst = (self.max_kkt_residual - other.max_kkt_residual).abs();
        if self.replications != other.replications {
            worst = f64::INFINITY;
        }
        for (x, y) in pairs {
            worst = worst.max((x.mean - y.mean).abs()).max((x.sd - y.sd).abs());
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: SimConfig,
    pub records: Vec<ReplicationRecord>,
    /// Wall time of each successful replication, aligned with `records`.
    pub wall_times: Vec<f64>,
    pub failures: Vec<ReplicationFailure>,
    pub edges: Option<EdgeTables>,
}

impl RunReport {
    pub fn aggregates(&self) -> Aggregates {
        Aggregates::from_records(&self.records)
    }

    pub fn complete(&self) -> bool {
        self.failures.is_empty() && self.records.len() == self.config.replications
    }
}

/// Tuned statistics for both axes of one replication.
#[derive(Debug, Clone)]
pub struct ReplicationState {
    pub spec: ModelSpec,
    pub gamma: TunedAxis,
    pub omega: TunedAxis,
}

/// Generates the model and data of replication `r` and tunes both axes.
pub fn prepare_replication(cfg: &SimConfig, seed_r: u64) -> Result<ReplicationState> {
    let omega = gen_precision(cfg.omega_kind, cfg.p, sub_seed(seed_r, 1))?;
    let gamma = gen_precision(cfg.gamma_kind, cfg.q, sub_seed(seed_r, 2))?;
    let spec = ModelSpec::new(omega, gamma)?.with_perturbation(cfg.nu)?;
    let data = sample_dataset(&spec, cfg.n, sub_seed(seed_r, 3))?;
    let (gamma_problem, omega_problem) = AxisProblem::pair(&data)?;
    drop(data);
    let gamma = tune_problem(&gamma_problem, &cfg.tuning_grid, &cfg.lasso)?;
    let omega = tune_problem(&omega_problem, &cfg.tuning_grid, &cfg.lasso)?;
    Ok(ReplicationState { spec, gamma, omega })
}

fn edge_table(statistics: &TestMatrix, alpha: f64) -> Result<EdgeTable> {
    let p_values = p_values(statistics)?;
    let selection = bh_select(&p_values, alpha)?;
    Ok(EdgeTable {
        statistics: statistics.clone(),
        p_values,
        selection,
    })
}

fn evaluate(
    state: &ReplicationState,
    gamma: &EdgeTable,
    omega: &EdgeTable,
    alpha: f64,
) -> Result<crate::fdr::JointMetrics> {
    let gamma_est = support_estimate(&gamma.selection, gamma.statistics.dim())?;
    let omega_est = support_estimate(&omega.selection, omega.statistics.dim())?;
    joint_metrics(&omega_est, &gamma_est, Some((&state.spec.omega, &state.spec.gamma)), alpha)
}

fn run_replication(cfg: &SimConfig, r: usize) -> Result<(ReplicationRecord, f64, Option<EdgeTables>)> {
    let start = Instant::now();
    let seed_r = replication_seed(cfg.seed, r);
    let state = prepare_replication(cfg, seed_r)?;
    let gamma = edge_table(&state.gamma.statistics, cfg.alpha)?;
    let omega = edge_table(&state.omega.statistics, cfg.alpha)?;
    let m = evaluate(&state, &gamma, &omega, cfg.alpha)?;
    let missing = || Error::Degenerate("metrics without ground truth".into());
    let record = ReplicationRecord {
        replication: r,
        seed: seed_r,
        a: m.a,
        b: m.b,
        a0: m.a0.ok_or_else(missing)?,
        b0: m.b0.ok_or_else(missing)?,
        fdp_omega: m.fdp_omega.ok_or_else(missing)?,
        fdp_gamma: m.fdp_gamma.ok_or_else(missing)?,
        fdp_joint: m.fdp_joint.ok_or_else(missing)?,
        alpha_prime: m.alpha_prime,
        power: m.power_joint.ok_or_else(missing)?,
        lambda_gamma: state.gamma.result.lambda_hat,
        delta_gamma: state.gamma.result.delta_hat,
        lambda_omega: state.omega.result.lambda_hat,
        delta_omega: state.omega.result.delta_hat,
        a_hat: state.gamma.statistics.a_hat,
        b_hat: state.omega.statistics.a_hat,
        max_kkt_residual: state.gamma.max_kkt_residual.max(state.omega.max_kkt_residual),
    };
    let edges = (cfg.write_edges && r == 0).then_some(EdgeTables { gamma, omega });
    Ok((record, start.elapsed().as_secs_f64(), edges))
}

/// Runs every replication. Replications are independent and run in parallel;
/// a failing replication is logged and listed in the report rather than
/// aborting the run.
pub fn run_simulation(cfg: &SimConfig) -> Result<RunReport> {
    cfg.validate()?;
    let outcomes: Vec<_> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| (r, run_replication(cfg, r)))
        .collect();
    let mut report = RunReport {
        config: cfg.clone(),
        records: Vec::new(),
        wall_times: Vec::new(),
        failures: Vec::new(),
        edges: None,
    };
    for (r, outcome) in outcomes {
        match outcome {
            Ok((record, wall, edges)) => {
                report.records.push(record);
                report.wall_times.push(wall);
                if edges.is_some() {
                    report.edges = edges;
                }
            }
            Err(e) => {
                let seed = replication_seed(cfg.seed, r);
                warn!("replication {r} (seed {seed}) failed: {e}");
                report.failures.push(ReplicationFailure {
                    replication: r,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocRecord {
    pub alpha: f64,
    pub replication: usize,
    pub a: usize,
    pub b: usize,
    pub fdp: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub alpha: f64,
    pub mean_fdp: f64,
    pub mean_power: f64,
}

#[derive(Debug, Clone)]
pub struct RocReport {
    pub records: Vec<RocRecord>,
    pub curve: Vec<RocPoint>,
    pub failures: Vec<ReplicationFailure>,
}

/// Joint FDP and power along a grid of per-axis levels. The statistics of a
/// replication do not depend on the level, so each replication is tuned once
/// and only the BH step is repeated.
pub fn run_roc(cfg: &SimConfig, alpha_grid: &[f64]) -> Result<RocReport> {
    cfg.validate()?;
    if alpha_grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    if let Some(bad) = alpha_grid.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {bad}")));
    }
    let mut grid = alpha_grid.to_vec();
    grid.sort_by(|a, b| a.total_cmp(b));
    grid.dedup();

    let outcomes: Vec<_> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed_r = replication_seed(cfg.seed, r);
            let run = || -> Result<Vec<RocRecord>> {
                let state = prepare_replication(cfg, seed_r)?;
                let gamma_p = p_values(&state.gamma.statistics)?;
                let omega_p = p_values(&state.omega.statistics)?;
                let mut rows = Vec::with_capacity(grid.len());
                for &alpha in &grid {
                    let gamma = EdgeTable {
                        statistics: state.gamma.statistics.clone(),
                        p_values: gamma_p.clone(),
                        selection: bh_select(&gamma_p, alpha)?,
                    };
                    let omega = EdgeTable {
                        statistics: state.omega.statistics.clone(),
                        p_values: omega_p.clone(),
                        selection: bh_select(&omega_p, alpha)?,
                    };
                    let m = evaluate(&state, &gamma, &omega, alpha)?;
                    rows.push(RocRecord {
                        alpha,
                        replication: r,
                        a: m.a,
                        b: m.b,
                        fdp: m.fdp_joint.unwrap_or(0.0),
                        power: m.power_joint.unwrap_or(0.0),
                    });
                }
                Ok(rows)
            };
            (r, seed_r, run())
        })
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, seed, outcome) in outcomes {
        match outcome {
            Ok(rows) => records.extend(rows),
            Err(e) => {
                warn!("replication {r} (seed {seed}) failed: {e}");
                failures.push(ReplicationFailure {
                    replication: r,
                    seed,
                    error: e.to_string(),
                });
            }
        }
    }
    let curve = grid
        .iter()
        .map(|&alpha| {
            let at: Vec<&RocRecord> = records.iter().filter(|rec| rec.alpha == alpha).collect();
            let k = at.len().max(1) as f64;
            RocPoint {
                alpha,
                mean_fdp: at.iter().map(|rec| rec.fdp).sum::<f64>() / k,
                mean_power: at.iter().map(|rec| rec.power).sum::<f64>() / k,
            }
        })
        .collect();
    Ok(RocReport {
        records,
        curve,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GraphKind;
    use crate::tuning::TuningGrid;

    fn small_cfg() -> SimConfig {
        SimConfig {
            n: 10,
            p: 20,
            q: 20,
            omega_kind: GraphKind::band(),
            gamma_kind: GraphKind::hub(),
            replications: 3,
            seed: 17,
            tuning_grid: TuningGrid::new(vec![1.0, 2.0], vec![1.0, 2.0]).unwrap(),
            ..SimConfig::default()
        }
    }

    #[test]
    fn seeds() {
        assert_eq!(replication_seed(0b1010, 3), 0b1001);
        assert_ne!(sub_seed(5, 1), sub_seed(5, 2));
    }

    #[test]
    fn simulation_is_deterministic_and_complete() {
        let cfg = small_cfg();
        let a = run_simulation(&cfg).unwrap();
        let b = run_simulation(&cfg).unwrap();
        assert!(a.complete());
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 3);
        assert!(a.records.iter().all(|r| (0.0..=1.0).contains(&r.fdp_joint) && (0.0..=1.0).contains(&r.power)));
        assert!(a.records.iter().all(|r| r.a % 2 == 0 && r.b % 2 == 0));
    }

    #[test]
    fn aggregates_ignore_replication_order() {
        let report = run_simulation(&small_cfg()).unwrap();
        let mut reversed = report.records.clone();
        reversed.reverse();
        let diff = Aggregates::from_records(&report.records).max_abs_diff(&Aggregates::from_records(&reversed));
        assert!(diff < 1e-12);
    }

    #[test]
    fn roc_power_is_monotone() {
        let cfg = SimConfig { replications: 2, ..small_cfg() };
        let roc = run_roc(&cfg, &[0.2, 1e-9, 0.05, 0.1]).unwrap();
        assert_eq!(roc.curve.len(), 4);
        assert_eq!(roc.curve[0].alpha, 1e-9);
        for r in 0..2 {
            let rows: Vec<&RocRecord> = roc.records.iter().filter(|x| x.replication == r).collect();
            for w in rows.windows(2) {
                assert!(w[1].power >= w[0].power);
                assert!(w[1].a >= w[0].a && w[1].b >= w[0].b);
            }
        }
        assert!(run_roc(&cfg, &[]).is_err());
    }
}
