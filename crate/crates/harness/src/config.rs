//! Run and sweep documents. Unknown keys are rejected everywhere.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tdi_core::env::glyphs::MAX_CLASSES;
use tdi_core::env::{ChainOptions, ChainRewards, Encoding, MaskedEnvConfig};
use tdi_core::learners::{DistillKind, DqnConfig, OptimizerKind, TargetKind};
use tdi_core::models::ModelKind;

use crate::error::{ConfigError, Issue};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Directory name of the run; derived from the config when absent.
    #[serde(default)]
    pub name: Option<String>,
    pub experiment: Experiment,
    pub env: EnvConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    /// Bootstrap parameter rule; a per-experiment default when absent.
    #[serde(default)]
    pub target: Option<TargetKind>,
    /// `n_T`: training examples, training seeds or buffer transitions.
    #[serde(default)]
    pub n_train: usize,
    #[serde(default)]
    pub n_test: Option<usize>,
    /// Optimizer steps, or episodes for the tabular experiment.
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// 0 measures only the initial and final parameters.
    #[serde(default)]
    pub checkpoint_every: usize,
    #[serde(default)]
    pub metrics: MetricToggles,
    #[serde(default)]
    pub seed: u64,
}

fn default_batch() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum Experiment {
    #[serde(rename = "classify")]
    Classify {},
    #[serde(rename = "regress")]
    Regress {},
    #[serde(rename = "ddqn")]
    Ddqn {
        /// The top-level `batch_size` replaces `dqn.batch_size`.
        #[serde(default)]
        dqn: DqnConfig,
    },
    #[serde(rename = "reinforce")]
    Reinforce {
        #[serde(default = "default_pg_gamma")]
        gamma: f64,
    },
    #[serde(rename = "policy-eval-ql")]
    PolicyEvalQl {
        #[serde(default)]
        double: bool,
        #[serde(default = "default_expert_epsilon")]
        expert_epsilon: f64,
    },
    #[serde(rename = "policy-eval-tdλ", alias = "policy-eval-td-lambda")]
    PolicyEvalTdLambda {
        lambda: f64,
        #[serde(default = "default_refresh")]
        refresh: usize,
        #[serde(default = "default_expert_epsilon")]
        expert_epsilon: f64,
    },
    #[serde(rename = "distill")]
    Distill {
        target: DistillKind,
        #[serde(default = "default_expert_epsilon")]
        expert_epsilon: f64,
    },
    #[serde(rename = "tabular")]
    Tabular {
        #[serde(default = "default_td_alpha")]
        alpha: f64,
        #[serde(default)]
        policy: PolicySpec,
    },
}

fn default_pg_gamma() -> f64 {
    0.99
}
fn default_expert_epsilon() -> f64 {
    0.1
}
fn default_refresh() -> usize {
    100
}
fn default_td_alpha() -> f64 {
    0.1
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Classify {} => "classify",
            Experiment::Regress {} => "regress",
            Experiment::Ddqn { .. } => "ddqn",
            Experiment::Reinforce { .. } => "reinforce",
            Experiment::PolicyEvalQl { .. } => "policy-eval-ql",
            Experiment::PolicyEvalTdLambda { .. } => "policy-eval-tdλ",
            Experiment::Distill { .. } => "distill",
            Experiment::Tabular { .. } => "tabular",
        }
    }

    /// Trained from a fixed expert replay buffer.
    pub fn uses_buffer(&self) -> bool {
        matches!(
            self,
            Experiment::PolicyEvalQl { .. } | Experiment::PolicyEvalTdLambda { .. } | Experiment::Distill { .. }
        )
    }

    pub fn is_supervised(&self) -> bool {
        matches!(self, Experiment::Classify {} | Experiment::Regress {})
    }

    /// Objective name used to group curves, including λ where relevant.
    pub fn objective_label(&self) -> String {
        match self {
            Experiment::PolicyEvalQl { double: true, .. } => "ddqn_eval".into(),
            Experiment::PolicyEvalQl { .. } => "ql_eval".into(),
            Experiment::PolicyEvalTdLambda { lambda, .. } => format!("td_lambda={lambda}"),
            Experiment::Distill { target, .. } => match target {
                DistillKind::Mc => "distill_mc".into(),
                DistillKind::Reg => "distill_reg".into(),
                DistillKind::TdStar => "distill_td_star".into(),
            },
            other => other.kind().into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicySpec {
    /// Greedy in the optimal action values.
    #[default]
    Greedy,
    Uniform,
    Deterministic { actions: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    /// Procedural glyph images: a classification dataset, or the masked
    /// exploration environment for control experiments.
    Glyphs {
        #[serde(default = "default_classes")]
        n_classes: usize,
        #[serde(default = "default_side")]
        width: usize,
        #[serde(default = "default_side")]
        height: usize,
        #[serde(default)]
        data_seed: u64,
        #[serde(default = "default_masked")]
        masked: MaskedEnvConfig,
    },
    /// Inputs uniform in `[−1, 1]^d`, targets from a fixed random network
    /// plus Gaussian noise.
    Teacher {
        #[serde(default = "default_teacher_inputs")]
        inputs: usize,
        #[serde(default = "default_teacher_hidden")]
        hidden: usize,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default)]
        data_seed: u64,
    },
    Chain {
        n_states: usize,
        #[serde(default)]
        rewards: ChainRewards,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        options: ChainOptions,
        #[serde(default = "default_encoding")]
        encoding: Encoding,
    },
    Grid {
        width: usize,
        height: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default)]
        slip: f64,
        #[serde(default = "default_encoding")]
        encoding: Encoding,
    },
}

fn default_classes() -> usize {
    10
}
fn default_side() -> usize {
    12
}
fn default_masked() -> MaskedEnvConfig {
    MaskedEnvConfig {
        window: 6,
        step: 3,
        max_steps: 12,
    }
}
fn default_teacher_inputs() -> usize {
    8
}
fn default_teacher_hidden() -> usize {
    16
}
fn default_noise() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    0.9
}
fn default_encoding() -> Encoding {
    Encoding::OneHot
}

impl EnvConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::Glyphs { .. } => "glyphs",
            EnvConfig::Teacher { .. } => "teacher",
            EnvConfig::Chain { .. } => "chain",
            EnvConfig::Grid { .. } => "grid",
        }
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self, EnvConfig::Chain { .. } | EnvConfig::Grid { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// `n_h`.
    pub hidden: usize,
    /// `n_L`.
    pub extra_layers: usize,
    pub slope: f64,
    /// Output count; the environment's natural count when absent. A single
    /// output on a tabular task learns state values.
    pub outputs: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Mlp,
            hidden: 32,
            extra_layers: 0,
            slope: 0.01,
            outputs: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd {
        lr: f64,
    },
    Momentum {
        lr: f64,
        #[serde(default = "default_beta")]
        beta: f64,
    },
    #[serde(rename = "rmsprop")]
    RmsProp {
        lr: f64,
        #[serde(default = "default_decay")]
        decay: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
    Adam {
        lr: f64,
        #[serde(default = "default_beta")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta() -> f64 {
    0.9
}
fn default_decay() -> f64 {
    0.99
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            lr: 1e-3,
            beta1: default_beta(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr }
            | OptimizerConfig::Momentum { lr, .. }
            | OptimizerConfig::RmsProp { lr, .. }
            | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        match *self {
            OptimizerConfig::Sgd { .. } => OptimizerKind::Sgd,
            OptimizerConfig::Momentum { beta, .. } => OptimizerKind::Momentum { beta },
            OptimizerConfig::RmsProp { decay, eps, .. } => OptimizerKind::RmsProp { decay, eps },
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => OptimizerKind::Adam { beta1, beta2, eps },
        }
    }

    pub fn name(&self) -> &'static str {
        self.kind().name()
    }
}

/// Which measurements a run records. With every toggle off only
/// `scalars.csv` is written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricToggles {
    /// Pairwise `ρ`, `ρ̄` and stiffness (`interference.csv`).
    pub interference: bool,
    /// A positive square: pairs are the cross product of two minibatches.
    pub n_pairs: usize,
    /// TD gain curves around update samples (`gain_curve.csv`).
    pub gain_curve: bool,
    /// Gradient cosine around update samples (`stiffness_curve.csv`).
    pub stiffness_curve: bool,
    /// Update samples per checkpoint for both curves.
    pub curve_updates: usize,
    pub max_offset: usize,
    /// Term breakdown of `ρ′` with a finite-difference slope (`rho_prime.csv`).
    pub rho_prime: bool,
    pub rho_prime_pairs: usize,
    /// Sign variance of the TD errors along buffer trajectories.
    pub sign_variance: bool,
    /// Save model parameters at every checkpoint.
    pub save_checkpoints: bool,
    /// Cap on evaluated seeds per split for control experiments.
    pub eval_seeds: usize,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            interference: true,
            n_pairs: 256,
            gain_curve: false,
            stiffness_curve: false,
            curve_updates: 16,
            max_offset: 10,
            rho_prime: false,
            rho_prime_pairs: 16,
            sign_variance: false,
            save_checkpoints: true,
            eval_seeds: 50,
        }
    }
}

impl MetricToggles {
    pub fn none() -> Self {
        MetricToggles {
            interference: false,
            save_checkpoints: false,
            ..MetricToggles::default()
        }
    }
}

/// Parse with the full key path of the first structural error.
fn parse<T: DeserializeOwned>(text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "<root>".to_string() } else { path };
        ConfigError::single(key, e.into_inner().to_string())
    })
}

fn from_value<T: DeserializeOwned>(v: Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let path = e.path().to_string();
        let key = if path == "." { "<root>".to_string() } else { path };
        ConfigError::single(key, e.into_inner().to_string())
    })
}

fn in_unit(issues: &mut Vec<Issue>, key: &str, v: f64) {
    if !(0.0..=1.0).contains(&v) {
        issues.push(Issue::new(key, format!("{v} is outside [0, 1]")));
    }
}

fn positive(issues: &mut Vec<Issue>, key: &str, v: usize) {
    if v == 0 {
        issues.push(Issue::new(key, "must be at least 1"));
    }
}

fn is_square(n: usize) -> bool {
    let s = (n as f64).sqrt().round() as usize;
    n > 0 && s * s == n
}

pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-' | '=' | '+'))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_value(v: Value) -> Result<Self, ConfigError> {
        let cfg: RunConfig = from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Target rule after defaults.
    pub fn target_rule(&self) -> TargetKind {
        if let Some(t) = self.target {
            return t;
        }
        match self.experiment {
            Experiment::Ddqn { .. } => TargetKind::Frozen { period: 200 },
            Experiment::PolicyEvalQl { .. } => TargetKind::Frozen { period: 500 },
            Experiment::PolicyEvalTdLambda { refresh, .. } => TargetKind::Frozen { period: refresh as u64 },
            _ => TargetKind::Online,
        }
    }

    /// Held-out examples, seeds or transitions after defaults.
    pub fn test_size(&self) -> usize {
        if let Some(n) = self.n_test {
            return n;
        }
        match self.experiment {
            Experiment::Classify {} | Experiment::Regress {} => 200,
            Experiment::Ddqn { .. } | Experiment::Reinforce { .. } => 50,
            Experiment::Tabular { .. } => 0,
            _ => self.n_train,
        }
    }

    /// The config with every defaulted choice made explicit.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        c.target = Some(self.target_rule());
        c.n_test = Some(self.test_size());
        if let Experiment::Ddqn { dqn } = &mut c.experiment {
            dqn.batch_size = self.batch_size;
        }
        c
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        if let Some(n) = &self.name {
            if !valid_name(n) {
                issues.push(Issue::new("name", "use letters, digits and . _ - = + only"));
            }
        }
        positive(&mut issues, "steps", self.steps);
        positive(&mut issues, "batch_size", self.batch_size);
        let tabular = matches!(self.experiment, Experiment::Tabular { .. });
        if !tabular {
            positive(&mut issues, "n_train", self.n_train);
        }
        self.validate_experiment(&mut issues);
        self.validate_env(&mut issues);
        self.validate_model(&mut issues);
        let lr = self.optimizer.lr();
        if !(lr.is_finite() && lr >= 0.0) {
            issues.push(Issue::new("optimizer.lr", "must be finite and nonnegative"));
        }
        match self.target {
            Some(TargetKind::Frozen { period: 0 }) => issues.push(Issue::new("target.period", "must be at least 1")),
            Some(TargetKind::Ema { tau }) => in_unit(&mut issues, "target.tau", tau),
            _ => {}
        }
        self.validate_metrics(&mut issues);
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    fn validate_experiment(&self, issues: &mut Vec<Issue>) {
        let env_ok = match self.experiment {
            Experiment::Classify {} | Experiment::Ddqn { .. } | Experiment::Reinforce { .. } => {
                matches!(self.env, EnvConfig::Glyphs { .. })
            }
            Experiment::Regress {} => matches!(self.env, EnvConfig::Teacher { .. }),
            _ => self.env.is_tabular(),
        };
        if !env_ok {
            issues.push(Issue::new(
                "env.kind",
                format!("`{}` cannot drive a `{}` experiment", self.env.kind(), self.experiment.kind()),
            ));
        }
        match &self.experiment {
            Experiment::Ddqn { dqn } => {
                in_unit(issues, "experiment.dqn.gamma", dqn.gamma);
                in_unit(issues, "experiment.dqn.epsilon_start", dqn.epsilon_start);
                in_unit(issues, "experiment.dqn.epsilon_end", dqn.epsilon_end);
                let default_batch = DqnConfig::default().batch_size;
                if dqn.batch_size != default_batch && dqn.batch_size != self.batch_size {
                    issues.push(Issue::new("experiment.dqn.batch_size", "set the top-level batch_size instead"));
                }
                if dqn.buffer_capacity < self.batch_size {
                    issues.push(Issue::new("experiment.dqn.buffer_capacity", "must hold a minibatch"));
                }
            }
            Experiment::Reinforce { gamma } => in_unit(issues, "experiment.gamma", *gamma),
            Experiment::PolicyEvalQl { expert_epsilon, .. } | Experiment::Distill { expert_epsilon, .. } => {
                in_unit(issues, "experiment.expert_epsilon", *expert_epsilon)
            }
            Experiment::PolicyEvalTdLambda {
                lambda,
                refresh,
                expert_epsilon,
            } => {
                in_unit(issues, "experiment.lambda", *lambda);
                positive(issues, "experiment.refresh", *refresh);
                in_unit(issues, "experiment.expert_epsilon", *expert_epsilon);
            }
            Experiment::Tabular { alpha, policy } => {
                if !(*alpha > 0.0 && *alpha <= 1.0) {
                    issues.push(Issue::new("experiment.alpha", "must be in (0, 1]"));
                }
                if let PolicySpec::Deterministic { actions } = policy {
                    if actions.is_empty() {
                        issues.push(Issue::new("experiment.policy.actions", "must name one action per state"));
                    }
                }
            }
            Experiment::Classify {} | Experiment::Regress {} => {}
        }
    }

    fn validate_env(&self, issues: &mut Vec<Issue>) {
        match &self.env {
            EnvConfig::Glyphs {
                n_classes,
                width,
                height,
                masked,
                ..
            } => {
                if !(1..=MAX_CLASSES).contains(n_classes) {
                    issues.push(Issue::new("env.n_classes", format!("must be in 1..={MAX_CLASSES}")));
                }
                if *width < 3 || *height < 3 {
                    issues.push(Issue::new("env.width", "images must be at least 3×3"));
                }
                if !self.experiment.is_supervised() {
                    if masked.window == 0 || masked.window > *width || masked.window > *height {
                        issues.push(Issue::new("env.masked.window", "must fit inside the image"));
                    }
                    positive(issues, "env.masked.step", masked.step);
                    positive(issues, "env.masked.max_steps", masked.max_steps);
                }
            }
            EnvConfig::Teacher { inputs, hidden, noise, .. } => {
                positive(issues, "env.inputs", *inputs);
                positive(issues, "env.hidden", *hidden);
                if !(noise.is_finite() && *noise >= 0.0) {
                    issues.push(Issue::new("env.noise", "must be finite and nonnegative"));
                }
            }
            EnvConfig::Chain {
                n_states,
                gamma,
                options,
                encoding,
                ..
            } => {
                if *n_states < 2 {
                    issues.push(Issue::new("env.n_states", "a chain needs at least 2 states"));
                }
                in_unit(issues, "env.gamma", *gamma);
                in_unit(issues, "env.options.slip", options.slip);
                if !matches!(options.actions, 1 | 2) {
                    issues.push(Issue::new("env.options.actions", "must be 1 or 2"));
                }
                check_encoding(issues, encoding);
            }
            EnvConfig::Grid {
                width,
                height,
                gamma,
                slip,
                encoding,
            } => {
                if *width * *height < 2 {
                    issues.push(Issue::new("env.width", "a grid needs at least 2 cells"));
                }
                in_unit(issues, "env.gamma", *gamma);
                in_unit(issues, "env.slip", *slip);
                check_encoding(issues, encoding);
            }
        }
    }

    fn validate_model(&self, issues: &mut Vec<Issue>) {
        let m = &self.model;
        if m.kind != ModelKind::Linear {
            positive(issues, "model.hidden", m.hidden);
        }
        if !m.slope.is_finite() {
            issues.push(Issue::new("model.slope", "must be finite"));
        }
        if let Some(o) = m.outputs {
            positive(issues, "model.outputs", o);
            let natural_only = !self.env.is_tabular();
            if natural_only {
                issues.push(Issue::new("model.outputs", "only tabular tasks accept an output override"));
            }
        }
        if m.kind == ModelKind::Conv && !matches!(self.env, EnvConfig::Glyphs { .. }) {
            issues.push(Issue::new("model.kind", "convolutional models need image inputs"));
        }
    }

    fn validate_metrics(&self, issues: &mut Vec<Issue>) {
        let t = &self.metrics;
        if !is_square(t.n_pairs) {
            issues.push(Issue::new("metrics.n_pairs", "must be a positive square"));
        }
        let buffer = self.experiment.uses_buffer();
        if (t.gain_curve || t.stiffness_curve) && !buffer {
            issues.push(Issue::new(
                "metrics.gain_curve",
                "gain and stiffness curves need a replay-buffer experiment",
            ));
        }
        if t.sign_variance && !(buffer || matches!(self.experiment, Experiment::Ddqn { .. })) {
            issues.push(Issue::new("metrics.sign_variance", "needs TD errors (buffer or ddqn experiments)"));
        }
        if t.gain_curve || t.stiffness_curve {
            positive(issues, "metrics.curve_updates", t.curve_updates);
        }
        if t.rho_prime {
            positive(issues, "metrics.rho_prime_pairs", t.rho_prime_pairs);
        }
        positive(issues, "metrics.eval_seeds", t.eval_seeds);
    }
}

fn check_encoding(issues: &mut Vec<Issue>, e: &Encoding) {
    if let Encoding::Rbf { per_axis, width } = e {
        positive(issues, "env.encoding.per_axis", *per_axis);
        if !(*width > 0.0 && width.is_finite()) {
            issues.push(Issue::new("env.encoding.width", "must be positive"));
        }
    }
}

/// A grid over dotted config paths, crossed with repetition seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub name: String,
    /// A run config document; axis values are written into it.
    pub base: Value,
    #[serde(default)]
    pub axes: BTreeMap<String, Vec<Value>>,
    /// Repetitions per grid point; repetition `r` runs with `base.seed + r`.
    #[serde(default = "default_seeds")]
    pub seeds: usize,
}

fn default_seeds() -> usize {
    3
}

/// One cell of the cross product.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub name: String,
    pub assignment: Vec<(String, Value)>,
    pub repetition: usize,
    pub config: Result<RunConfig, ConfigError>,
}

fn axis_token(v: &Value) -> String {
    let raw = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '.' | '-') { c } else { '-' })
        .collect()
}

/// Write `value` at a dotted path, creating intermediate objects.
pub fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), ConfigError> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| ConfigError::single(path, format!("`{}` is not an object", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Err(ConfigError::single(path, "empty path"))
}

impl SweepConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let s: SweepConfig = parse(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        if !valid_name(&self.name) {
            issues.push(Issue::new("name", "use letters, digits and . _ - = + only"));
        }
        if !self.base.is_object() {
            issues.push(Issue::new("base", "must be a run config object"));
        }
        positive(&mut issues, "seeds", self.seeds);
        for (k, v) in &self.axes {
            if v.is_empty() {
                issues.push(Issue::new(format!("axes.{k}"), "an axis needs at least one value"));
            }
            if k == "seed" || k == "name" {
                issues.push(Issue::new(format!("axes.{k}"), "seed and name are set by the sweep"));
            }
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError { issues })
        }
    }

    /// Cross product of the axes (in key order) times the repetitions.
    pub fn expand(&self) -> Vec<SweepPoint> {
        let mut cells: Vec<Vec<(String, Value)>> = vec![vec![]];
        for (k, values) in &self.axes {
            cells = cells
                .into_iter()
                .flat_map(|c| {
                    values.iter().map(move |v| {
                        let mut c = c.clone();
                        c.push((k.clone(), v.clone()));
                        c
                    })
                })
                .collect();
        }
        let base_seed = self.base.get("seed").and_then(Value::as_u64).unwrap_or(0);
        let mut out = Vec::with_capacity(cells.len() * self.seeds);
        for cell in cells {
            for rep in 0..self.seeds {
                let mut parts: Vec<String> = cell.iter().map(|(k, v)| format!("{k}={}", axis_token(v))).collect();
                parts.push(format!("rep{rep}"));
                let name = parts.join("+");
                let mut doc = self.base.clone();
                let mut applied = Ok(());
                for (k, v) in &cell {
                    if let Err(e) = set_path(&mut doc, k, v.clone()) {
                        applied = Err(e);
                        break;
                    }
                }
                let config = applied.and_then(|_| {
                    set_path(&mut doc, "seed", Value::from(base_seed + rep as u64))?;
                    set_path(&mut doc, "name", Value::from(name.clone()))?;
                    RunConfig::from_value(doc)
                });
                out.push(SweepPoint {
                    name,
                    assignment: cell.clone(),
                    repetition: rep,
                    config,
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"{"experiment": {"kind": "classify"}, "env": {"kind": "glyphs"}, "n_train": 20, "steps": 10}"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let c = RunConfig::from_json(MIN).unwrap();
        let r = c.resolved();
        assert_eq!(r.target, Some(TargetKind::Online));
        assert_eq!(r.n_test, Some(200));
        assert!(matches!(c.optimizer, OptimizerConfig::Adam { .. }));
    }

    #[test]
    fn unknown_keys_are_named() {
        let text = MIN.replace("\"steps\"", "\"stepz\": 1, \"steps\"");
        let e = RunConfig::from_json(&text).unwrap_err();
        assert!(e.issues[0].message.contains("stepz"), "{e}");
        let nested = r#"{"experiment": {"kind": "policy-eval-tdλ", "lambda": 0.5, "lamda": 1},
            "env": {"kind": "chain", "n_states": 5}, "n_train": 20, "steps": 10}"#;
        let e = RunConfig::from_json(nested).unwrap_err();
        assert!(e.issues[0].message.contains("lamda"), "{e}");
        let deep = r#"{"experiment": {"kind": "classify"}, "env": {"kind": "glyphs"}, "n_train": 20, "steps": 10,
            "metrics": {"interferance": true}}"#;
        let e = RunConfig::from_json(deep).unwrap_err();
        assert_eq!(e.keys(), vec!["metrics.interferance"]);
    }

    #[test]
    fn semantic_errors_are_collected() {
        let bad = r#"{"experiment": {"kind": "policy-eval-tdλ", "lambda": 1.5},
            "env": {"kind": "glyphs"}, "n_train": 0, "steps": 10, "metrics": {"n_pairs": 10}}"#;
        let e = RunConfig::from_json(bad).unwrap_err();
        let keys = e.keys();
        for k in ["n_train", "experiment.lambda", "env.kind", "metrics.n_pairs"] {
            assert!(keys.contains(&k), "{k} missing from {keys:?}");
        }
    }

    #[test]
    fn lambda_kind_accepts_ascii_alias() {
        let text = r#"{"experiment": {"kind": "policy-eval-td-lambda", "lambda": 0.5},
            "env": {"kind": "chain", "n_states": 5}, "n_train": 20, "steps": 10}"#;
        let c = RunConfig::from_json(text).unwrap();
        assert_eq!(c.experiment.kind(), "policy-eval-tdλ");
        assert_eq!(c.target_rule(), TargetKind::Frozen { period: 100 });
    }

    #[test]
    fn sweep_expands_the_cross_product() {
        let base: Value = serde_json::from_str(MIN).unwrap();
        let s = SweepConfig {
            name: "g".into(),
            base,
            axes: BTreeMap::from([
                ("model.hidden".into(), vec![Value::from(8), Value::from(16)]),
                ("n_train".into(), vec![Value::from(10), Value::from(20), Value::from(30)]),
            ]),
            seeds: 3,
        };
        let pts = s.expand();
        assert_eq!(pts.len(), 18);
        let names: std::collections::BTreeSet<_> = pts.iter().map(|p| p.name.clone()).collect();
        assert_eq!(names.len(), 18);
        let c = pts[4].config.as_ref().unwrap();
        assert_eq!((c.model.hidden, c.n_train, c.seed), (8, 20, 1));
        assert_eq!(c.name.as_deref(), Some("model.hidden=8+n_train=20+rep1"));
    }
}
