//! `manifest.json`: everything that influenced a run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tdi_core::learners::TargetKind;
use tdi_core::models::ModelSpec;
use tdi_core::rng;

use crate::config::{Experiment, RunConfig};
use crate::error::{HarnessError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Ok,
    Failed,
}

/// Grouping keys used by the reports.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Labels {
    /// `kind/env`, e.g. `classify/glyphs`.
    pub experiment: String,
    pub objective: String,
    pub optimizer: String,
    pub target: String,
    pub lambda: Option<f64>,
    /// `objective/optimizer/target`.
    pub curve_group: String,
    pub n_train: usize,
    pub hidden: usize,
    pub extra_layers: usize,
}

impl Labels {
    pub fn of(cfg: &RunConfig) -> Self {
        let objective = cfg.experiment.objective_label();
        let optimizer = cfg.optimizer.name().to_string();
        let target = cfg.target_rule().name().to_string();
        Labels {
            experiment: format!("{}/{}", cfg.experiment.kind(), cfg.env.kind()),
            curve_group: format!("{objective}/{optimizer}/{target}"),
            objective,
            optimizer,
            target,
            lambda: match cfg.experiment {
                Experiment::PolicyEvalTdLambda { lambda, .. } => Some(lambda),
                _ => None,
            },
            n_train: cfg.n_train,
            hidden: cfg.model.hidden,
            extra_layers: cfg.model.extra_layers,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub status: RunStatus,
    pub error: Option<String>,
    pub version: String,
    /// The configuration with every default made explicit.
    pub config: RunConfig,
    pub labels: Labels,
    pub model: Option<ModelSpec>,
    /// Named random streams derived from the master seed.
    pub seeds: BTreeMap<String, u64>,
    pub constants: BTreeMap<String, Value>,
    /// Facts established while running, e.g. the realized buffer size.
    pub data: BTreeMap<String, Value>,
    pub files: Vec<String>,
}

pub const SEED_STREAMS: &[&str] = &["init", "train", "metrics", "buffer", "test_buffer", "data"];

pub fn seed_map(master: u64) -> BTreeMap<String, u64> {
    SEED_STREAMS.iter().map(|s| (s.to_string(), rng::derive(master, s))).collect()
}

pub fn constants() -> BTreeMap<String, Value> {
    let mut c = BTreeMap::new();
    let mut put = |k: &str, v: Value| {
        c.insert(k.to_string(), v);
    };
    put("rng", "xoshiro256** seeded from splitmix64-derived named streams".into());
    put("interference_loss", "J = ½(f − y)², so ∂J/∂f = δ; cross-entropy for classifiers".into());
    put("training_loss", "minibatch mean of (f − y)²; mean cross-entropy for classifiers".into());
    put("gain", "J_θ′ − J_θ of the unhalved pointwise loss, targets from the learner's rule".into());
    put("fd_alphas", serde_json::json!(crate::measure::FD_ALPHAS));
    put("fd_slope", "(q(θ − α·d) − q(θ))/α".into());
    put("sign_window", tdi_core::metrics::stats::SIGN_WINDOW.into());
    put(
        "gap",
        "classify: train − test accuracy; regress, buffer tasks: test − train loss; control: train − test return"
            .into(),
    );
    put("target_rule_names", serde_json::json!(["self", "frozen", "ema"]));
    c
}

impl Manifest {
    pub fn new(run_id: &str, cfg: &RunConfig) -> Self {
        Manifest {
            run_id: run_id.to_string(),
            status: RunStatus::Running,
            error: None,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.resolved(),
            labels: Labels::of(cfg),
            model: None,
            seeds: seed_map(cfg.seed),
            constants: constants(),
            data: BTreeMap::new(),
            files: vec![],
        }
    }

    pub fn target(&self) -> TargetKind {
        self.config.target_rule()
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let p = dir.join(MANIFEST);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&p, text + "\n").map_err(|e| HarnessError::io(p, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        let text = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
