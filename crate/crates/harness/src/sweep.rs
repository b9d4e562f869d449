//! Grid sweeps on a bounded worker pool. Each run owns its directory; a
//! failing run is recorded and never stops its siblings.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{SweepConfig, SweepPoint};
use crate::error::{HarnessError, Result};
use crate::run::run_in;

pub const SWEEP_SUMMARY: &str = "sweep.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointStatus {
    Ok,
    /// The expanded config did not validate; nothing was run.
    Invalid,
    Failed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub name: String,
    pub assignment: Vec<(String, Value)>,
    pub repetition: usize,
    pub status: PointStatus,
    pub dir: PathBuf,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub name: String,
    pub jobs: usize,
    pub n_runs: usize,
    pub n_ok: usize,
    pub n_failed: usize,
    pub entries: Vec<SweepEntry>,
}

fn run_point(p: &SweepPoint, dir: &Path) -> SweepEntry {
    let dir = dir.join(&p.name);
    let (status, error) = match &p.config {
        Err(e) => (PointStatus::Invalid, Some(e.to_string())),
        Ok(cfg) => match run_in(cfg, &dir, &p.name) {
            Ok(_) => (PointStatus::Ok, None),
            Err(e) => (PointStatus::Failed, Some(e.to_string())),
        },
    };
    SweepEntry {
        name: p.name.clone(),
        assignment: p.assignment.clone(),
        repetition: p.repetition,
        status,
        dir,
        error,
    }
}

/// Run every point of the grid under `<root>/<sweep name>/<point name>`
/// with at most `jobs` runs in flight.
pub fn sweep(cfg: &SweepConfig, root: &Path, jobs: usize) -> Result<SweepSummary> {
    cfg.validate()?;
    let dir = root.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(|e| HarnessError::io(&dir, e))?;
    let points = cfg.expand();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Report(e.to_string()))?;
    let entries: Vec<SweepEntry> = pool.install(|| points.par_iter().map(|p| run_point(p, &dir)).collect());
    let n_ok = entries.iter().filter(|e| e.status == PointStatus::Ok).count();
    let summary = SweepSummary {
        name: cfg.name.clone(),
        jobs: jobs.max(1),
        n_runs: entries.len(),
        n_ok,
        n_failed: entries.len() - n_ok,
        entries,
    };
    let p = dir.join(SWEEP_SUMMARY);
    let text = serde_json::to_string_pretty(&summary)? + "\n";
    std::fs::write(&p, text).map_err(|e| HarnessError::io(&p, e))?;
    Ok(summary)
}
