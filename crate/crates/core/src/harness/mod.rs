//! Metrics, convergence diagnostics and experiment orchestration.

pub mod diagnostics;
pub mod experiment;
pub mod metrics;

pub use diagnostics::{theoretical_delta, variance_probe, DiagnosticsConfig, VarianceProbe, VarianceProbeConfig};
pub use metrics::{auc, empirical_rho, rounds_to_target, MetricsRecord, Target};
pub use experiment::{run_experiment, DataSpec, ExperimentConfig, ExperimentReport};
