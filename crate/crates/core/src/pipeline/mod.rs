//! Orchestration: configuration, replication engine, data ingestion and
//! result files.

pub mod config;
pub mod estimate;
pub mod ingest;
pub mod report;
pub mod simulate;

pub use config::SimConfig;
pub use estimate::{estimate, tune_both, AlphaMode, EstimateResult, TuningSummary};
pub use ingest::{ingest_real, Layout, RealData, Source, Transform};
pub use report::{emit_estimate, emit_report, emit_roc, emit_tuning, read_replications};
pub use simulate::{run_roc, run_simulation, Aggregates, ReplicationRecord, RocReport, RunReport};
