//! CSV and JSON output.
//!
//! `replications.csv` holds only deterministic fields, so two runs with the
//! same configuration produce identical files; timings and timestamps go to
//! `summary.json`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tuning::TuningGrid;

use super::config::SimConfig;
use super::estimate::{EstimateResult, TuningSummary};
use super::simulate::{
    replication_seed, Aggregates, EdgeTable, EdgeTables, ReplicationFailure, ReplicationRecord, RocReport, RunReport,
    RNG_ALGORITHM,
};

pub const REPLICATIONS_FILE: &str = "replications.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EDGES_GAMMA_FILE: &str = "edges_gamma.csv";
pub const EDGES_OMEGA_FILE: &str = "edges_omega.csv";
pub const ROC_FILE: &str = "roc.csv";
pub const ROC_CURVE_FILE: &str = "roc_curve.csv";
pub const ESTIMATE_FILE: &str = "estimate.json";
pub const TUNING_FILE: &str = "tuning.json";

#[derive(Debug, Serialize)]
struct Summary<'a> {
    software: &'static str,
    version: &'static str,
    rng: &'static str,
    complete: bool,
    aggregates: Aggregates,
    config: &'a SimConfig,
    tuning_grid: TuningGrid,
    replication_seeds: Vec<u64>,
    failures: &'a [ReplicationFailure],
    wall_times: &'a [f64],
    written_at_unix: u64,
}

#[derive(Debug, Serialize)]
struct EdgeRow {
    i: usize,
    j: usize,
    t: f64,
    p: f64,
    rejected: bool,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data(format!("{}: {other:?}", path.display())),
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: &[T]) -> Result<()> {
    // Serde only emits a header with the first row; write it explicitly so an
    // empty table still has one.
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    wtr.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        wtr.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    let bytes = wtr.into_inner().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Column names of `replications.csv`, in order.
pub const REPLICATION_HEADER: [&str; 18] = [
    "replication",
    "seed",
    "a",
    "b",
    "a0",
    "b0",
    "fdp_omega",
    "fdp_gamma",
    "fdp_joint",
    "alpha_prime",
    "power",
    "lambda_gamma",
    "delta_gamma",
    "lambda_omega",
    "delta_omega",
    "a_hat",
    "b_hat",
    "max_kkt_residual",
];

pub fn read_replications(path: &Path) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    rdr.deserialize()
        .map(|r| r.map_err(|e| csv_err(path, e)))
        .collect()
}

pub fn write_edges(dir: &Path, edges: &EdgeTables) -> Result<(PathBuf, PathBuf)> {
    let one = |table: &EdgeTable, name: &str| -> Result<PathBuf> {
        let rejected: std::collections::HashSet<(usize, usize)> =
            table.selection.rejected.iter().copied().collect();
        let rows: Vec<EdgeRow> = table
            .p_values
            .pairs
            .iter()
            .zip(&table.p_values.values)
            .map(|(&(i, j), &p)| EdgeRow {
                i,
                j,
                t: table.statistics.t[(i, j)],
                p,
                rejected: rejected.contains(&(i, j)),
            })
            .collect();
        let path = dir.join(name);
        write_rows(&path, &["i", "j", "t", "p", "rejected"], &rows)?;
        Ok(path)
    };
    Ok((one(&edges.gamma, EDGES_GAMMA_FILE)?, one(&edges.omega, EDGES_OMEGA_FILE)?))
}

/// Writes `replications.csv`, `summary.json` and, when present, the edge
/// tables; then re-reads the CSV and checks the aggregates against it.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let csv_path = dir.join(REPLICATIONS_FILE);
    write_rows(&csv_path, &REPLICATION_HEADER, &report.records)?;
    written.push(csv_path.clone());

    let aggregates = report.aggregates();
    let reread = Aggregates::from_records(&read_replications(&csv_path)?);
    let diff = aggregates.max_abs_diff(&reread);
    if !(diff <= 1e-12) {
        return Err(Error::Data(format!(
            "{}: aggregates differ from the written records by {diff:e}",
            csv_path.display()
        )));
    }

    let summary = Summary {
        software: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        rng: RNG_ALGORITHM,
        complete: report.complete(),
        aggregates,
        config: &report.config,
        tuning_grid: report.config.tuning_grid.normalized(),
        replication_seeds: (0..report.config.replications)
            .map(|r| replication_seed(report.config.seed, r))
            .collect(),
        failures: &report.failures,
        wall_times: &report.wall_times,
        written_at_unix: unix_now(),
    };
    let summary_path = dir.join(SUMMARY_FILE);
    write_json(&summary_path, &summary)?;
    written.push(summary_path);

    if let Some(edges) = &report.edges {
        let (g, o) = write_edges(dir, edges)?;
        written.push(g);
        written.push(o);
    }
    Ok(written)
}

pub fn emit_roc(roc: &RocReport, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rows_path = dir.join(ROC_FILE);
    write_rows(&rows_path, &["alpha", "replication", "a", "b", "fdp", "power"], &roc.records)?;
    let curve_path = dir.join(ROC_CURVE_FILE);
    write_rows(&curve_path, &["alpha", "mean_fdp", "mean_power"], &roc.curve)?;
    Ok(vec![rows_path, curve_path])
}

#[derive(Debug, Serialize)]
struct EstimateSummary<'a> {
    version: &'static str,
    tuning: &'a TuningSummary,
    metrics: &'a crate::fdr::JointMetrics,
    alpha_choice: &'a Option<crate::fdr::AlphaChoice>,
    written_at_unix: u64,
}

pub fn emit_estimate(result: &EstimateResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(ESTIMATE_FILE);
    write_json(
        &path,
        &EstimateSummary {
            version: env!("CARGO_PKG_VERSION"),
            tuning: &result.tuning,
            metrics: &result.metrics,
            alpha_choice: &result.alpha_choice,
            written_at_unix: unix_now(),
        },
    )?;
    let (g, o) = write_edges(dir, &result.edges)?;
    Ok(vec![path, g, o])
}

pub fn emit_tuning(tuning: &TuningSummary, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(TUNING_FILE);
    write_json(&path, tuning)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(r: usize, fdp: f64) -> ReplicationRecord {
        ReplicationRecord {
            replication: r,
            seed: r as u64,
            a: 4,
            b: 6,
            a0: 1,
            b0: 0,
            fdp_omega: 0.25,
            fdp_gamma: 0.0,
            fdp_joint: fdp,
            alpha_prime: 0.1 + 1.0 / 3.0,
            power: 1.0,
            lambda_gamma: 1.5,
            delta_gamma: 2.0,
            lambda_omega: 0.5,
            delta_omega: 3.0,
            a_hat: 1.0 / 7.0,
            b_hat: 2.0f64.sqrt(),
            max_kkt_residual: 1e-9,
        }
    }

    fn report(records: Vec<ReplicationRecord>) -> RunReport {
        RunReport {
            config: SimConfig {
                replications: records.len().max(1),
                ..SimConfig::default()
            },
            wall_times: vec![0.5; records.len()],
            records,
            failures: vec![],
            edges: None,
        }
    }

    #[test]
    fn empty_report() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(&report(vec![]), dir.path()).unwrap();
        let csv = fs::read_to_string(dir.path().join(REPLICATIONS_FILE)).unwrap();
        assert_eq!(csv.lines().count(), 1);
        assert!(csv.starts_with("replication,seed,a,b,"));
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
        assert_eq!(json["aggregates"]["replications"], 0);
    }

    #[test]
    fn records_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![record(0, 0.1 + 0.2), record(1, std::f64::consts::PI / 10.0)];
        emit_report(&report(records.clone()), dir.path()).unwrap();
        assert_eq!(read_replications(&dir.path().join(REPLICATIONS_FILE)).unwrap(), records);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap()).unwrap();
        let mean = json["aggregates"]["fdp_joint"]["mean"].as_f64().unwrap();
        assert!((mean - Aggregates::from_records(&records).fdp_joint.mean).abs() <= 1e-12);
        assert!(json["rng"].as_str().unwrap().contains("ChaCha20"));
    }

    #[test]
    fn unwritable_directory_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let err = emit_report(&report(vec![]), &blocker.join("sub")).unwrap_err();
        assert!(err.to_string().contains("file"));
        assert_eq!(err.exit_code(), 3);
    }
}
