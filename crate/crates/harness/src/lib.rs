//! Command-line tooling around the `grfmhe` estimators: scenario configuration,
//! CSV logs, metrics and the end-to-end benchmark.

pub mod bench;
pub mod config;
pub mod error;
pub mod io;
pub mod metrics;
pub mod run;
pub mod trace;

pub use bench::{run_benchmark, BenchOutput};
pub use config::{EstimatorKind, ScenarioConfig};
pub use error::{HarnessError, Result};
pub use metrics::{compute_rmse, Field, MetricsReport, Rmse};
pub use trace::{RowStatus, Trace, TraceRow};
