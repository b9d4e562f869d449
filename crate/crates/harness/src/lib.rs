//! Experiment harness: configuration, runs, sweeps, reports and verification.

pub mod config;
pub mod error;
pub mod manifest;
pub mod measure;
pub mod report;
pub mod run;
pub mod svg;
pub mod sweep;
pub mod tables;
pub mod verify;

pub use config::{RunConfig, SweepConfig};
pub use error::{ConfigError, HarnessError, Issue, Result};
pub use manifest::{Manifest, RunStatus};
pub use report::{report_correlations, report_curves};
pub use run::{output_root, run, run_id, run_in, RunOutcome};
pub use sweep::{sweep, SweepSummary};
pub use verify::{verify, VerifyOptions, VerifyReport};
