//! Conditional-independence graphs for matrix-variate Gaussian data.
//!
//! An observation is a `p x q` matrix `X` with `vec(X') ~ N(vec(mu'), Sigma (x) Psi)`.
//! The row precision `Omega = Sigma^-1` and the column precision
//! `Gamma = Psi^-1` are recovered edge by edge: node-wise Lasso fits give
//! residual correlations, a variance correction turns them into approximately
//! standard normal statistics, and Benjamini-Hochberg selects the edges on each
//! axis. The joint graph is the Kronecker product of the two supports.
//!
//! Modules, bottom up: [`model`] (graphs, sampling), [`regression`] (node-wise
//! Lasso), [`teststat`] (statistics), [`fdr`] (selection and joint metrics),
//! [`tuning`] (data-driven `lambda`, `delta`), [`pipeline`] (replications, I/O).

// NaN must fail the comparisons used for validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fdr;
pub mod mask;
pub mod model;
pub mod pipeline;
pub mod regression;
pub mod teststat;
pub mod tuning;

pub use error::{Error, Result};
pub use fdr::{bh_select, joint_metrics, kron_support, p_values, support_estimate, BhSelection, JointMetrics, SupportEstimate};
pub use mask::Mask;
pub use model::{gen_precision, sample_dataset, Dataset, GraphFamily, GraphKind, ModelSpec, PrecisionMatrix};
pub use regression::{fit_all, lasso_fit, CoefficientSet, LassoConfig, LassoFit};
pub use teststat::{run_axis, Axis, AxisProblem, TestMatrix};
pub use tuning::{ats_objective, tune, TuningGrid, TuningResult};
