//! Experiment orchestration: configuration, the training loop, metrics, and
//! cross-seed reporting.

pub mod aggregate;
pub mod config;
pub mod metrics;
pub mod plot;
pub mod run;

pub use aggregate::{aggregate, aggregate_dirs, smooth, write_aggregate, Aggregate, Curve, FinalScore, RunRecord};
pub use config::{Algorithm, RunConfig};
pub use metrics::{read_metrics, MetricRow};
pub use plot::plot;
pub use run::{run, run_observed, RunSummary, StepEvent};
