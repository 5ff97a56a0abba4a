//! Experiment configuration, the round loop, metrics, and config-driven
//! analyses.

pub mod config;
mod experiment;
mod metrics;
mod reports;
mod schedule;

pub use config::{ExperimentConfig, SCHEMA_VERSION};
pub use experiment::{run_experiment, Experiment, ExperimentOutput};
pub use metrics::{read_metrics, write_metrics, write_metrics_to, MetricsFormat, MetricsRecord, CSV_HEADER};
pub use reports::{
    bound_report, contraction_report, fixed_point_summary, landscape, parse_grid,
    variance_report, write_landscape, FixedPointSummary,
};
pub use schedule::{lr_at, LrSchedule};
