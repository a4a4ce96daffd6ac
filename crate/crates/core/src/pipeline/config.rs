use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GraphKind;
use crate::regression::LassoConfig;
use crate::tuning::TuningGrid;

/// Simulation settings, read from a single JSON document. Every field has a
/// default and unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n: usize,
    pub p: usize,
    pub q: usize,
    pub omega_kind: GraphKind,
    pub gamma_kind: GraphKind,
    /// Per-axis BH level.
    pub alpha: f64,
    pub replications: usize,
    pub seed: u64,
    /// Perturbation `nu` of the Kronecker covariance.
    pub nu: f64,
    pub tuning_grid: TuningGrid,
    /// Solver settings; `delta` is replaced by the tuned value.
    pub lasso: LassoConfig,
    pub output_dir: PathBuf,
    /// Write per-pair statistics of the first replication.
    pub write_edges: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n: 100,
            p: 100,
            q: 100,
            omega_kind: GraphKind::hub(),
            gamma_kind: GraphKind::hub(),
            alpha: 0.1,
            replications: 30,
            seed: 0,
            nu: 0.0,
            tuning_grid: TuningGrid::default(),
            lasso: LassoConfig::default(),
            output_dir: PathBuf::from("out"),
            write_edges: false,
        }
    }
}

impl SimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: SimConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.n < 2 {
            return Err(Error::Config(format!("n must be >= 2, got {}", self.n)));
        }
        if self.p < 5 || self.q < 5 {
            return Err(Error::Config(format!(
                "p and q must be >= 5 for tuning, got p = {}, q = {}",
                self.p, self.q
            )));
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return Err(Error::Config(format!("nu must be >= 0, got {}", self.nu)));
        }
        for kind in [&self.omega_kind, &self.gamma_kind] {
            if !(kind.factor.is_finite() && kind.factor > 0.0) {
                return Err(Error::Config(format!("graph factor must be positive, got {}", kind.factor)));
            }
        }
        self.tuning_grid.validate()?;
        self.lasso.validate()?;
        Ok(())
    }
}
