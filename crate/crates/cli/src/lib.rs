//! Config-driven experiment runner for `exittails`.

// `!(x > 0)` guards reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod report;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use report::{report, Report, ReportError};
pub use run::{run, ResultManifest, RunFailure, RunOutcome, RunStatus};
