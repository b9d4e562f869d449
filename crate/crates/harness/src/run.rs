//! One experiment: build data, train, measure at checkpoints, write tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde_json::{json, Value};
use tdi_autodiff::Tensor;
use tdi_core::env::{
    argmax, chain_mdp_with, dp_policy_evaluation, glyph_generate, grid_mdp_with, make_expert_buffer, value_iteration,
    Encoding, GlyphDataset, MaskedImageEnv, Policy, ReplayBuffer, TabularMdp, Transition,
};
use tdi_core::learners::{
    evaluate_agent, model_input, q_learning_targets, tabular_td0, train, AgentKind, BufferLearner, BufferObjective,
    DqnAgent, Expert, Learner, Optimizer, OptimizerKind, ReinforceAgent, Schedule, SupervisedLearner, TabularExpert,
    TargetKind, TargetRule,
};
use tdi_core::models::{Head, ModelKind, ModelSpec, ValueModel};
use tdi_core::rho_dynamics::{TdOptions, TdSample};
use tdi_core::rng;
use tdi_core::sample::{LossSample, LossTarget};
use tdi_core::CoreError;

use crate::config::{EnvConfig, Experiment, PolicySpec, RunConfig};
use crate::error::{HarnessError, Result};
use crate::manifest::{Manifest, RunStatus};
use crate::measure::{buffer_predictions, buffer_samples, mean_of, Recorder};
use crate::tables;

pub const OUTPUT_ROOT_VAR: &str = "TDI_OUTPUT_ROOT";

/// `$TDI_OUTPUT_ROOT`, or `runs` in the working directory.
pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

fn fnv64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// The config name, or the kind plus a hash of the resolved config.
pub fn run_id(cfg: &RunConfig) -> String {
    if let Some(n) = &cfg.name {
        return n.clone();
    }
    let text = serde_json::to_string(&cfg.resolved()).expect("config serializes");
    let kind: String = cfg
        .experiment
        .kind()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { 'l' })
        .collect();
    format!("{kind}-{:016x}", fnv64(text.as_bytes()))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub manifest: Manifest,
}

/// Validate, then run into `<root>/<run id>`.
pub fn run(cfg: &RunConfig, root: &Path) -> Result<RunOutcome> {
    cfg.validate()?;
    let id = run_id(cfg);
    run_in(cfg, &root.join(&id), &id)
}

const OUTPUTS: &[&str] = &[
    tables::SCALARS,
    tables::INTERFERENCE,
    tables::GAIN_CURVE,
    tables::STIFFNESS_CURVE,
    tables::RHO_PRIME,
];

/// Run into `dir`. The manifest is written before training and rewritten
/// with the final status, also on failure.
pub fn run_in(cfg: &RunConfig, dir: &Path, id: &str) -> Result<RunOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    for f in OUTPUTS {
        let p = dir.join(f);
        if p.exists() {
            std::fs::remove_file(&p).map_err(|e| HarnessError::io(&p, e))?;
        }
    }
    let ck = dir.join("checkpoints");
    if ck.exists() {
        std::fs::remove_dir_all(&ck).map_err(|e| HarnessError::io(&ck, e))?;
    }
    let mut manifest = Manifest::new(id, cfg);
    manifest.write(dir)?;
    let cfg = manifest.config.clone();
    match execute(&cfg, dir, &mut manifest) {
        Ok(files) => {
            manifest.status = RunStatus::Ok;
            manifest.files = files;
            manifest.write(dir)?;
            Ok(RunOutcome {
                run_id: id.to_string(),
                dir: dir.to_path_buf(),
                manifest,
            })
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.write(dir)?;
            Err(e)
        }
    }
}

fn execute(cfg: &RunConfig, dir: &Path, m: &mut Manifest) -> Result<Vec<String>> {
    let seeds = m.seeds.clone();
    let ctx = Ctx { cfg, seeds, dir };
    match &cfg.experiment {
        Experiment::Classify {} => ctx.classify(m),
        Experiment::Regress {} => ctx.regress(m),
        Experiment::Ddqn { .. } => ctx.ddqn(m),
        Experiment::Reinforce { gamma } => ctx.reinforce(m, *gamma),
        Experiment::PolicyEvalQl { .. } | Experiment::PolicyEvalTdLambda { .. } | Experiment::Distill { .. } => {
            ctx.buffer_task(m)
        }
        Experiment::Tabular { alpha, policy } => ctx.tabular(m, *alpha, policy),
    }
}

/// Drive `train`, keeping harness errors raised inside the callback.
fn drive<L: Learner>(
    learner: &mut L,
    schedule: &Schedule,
    seed: u64,
    mut f: impl FnMut(usize, &mut L) -> Result<()>,
) -> Result<()> {
    let mut failure = None;
    let res = train(learner, schedule, seed, |step, l| {
        f(step, l).map_err(|e| {
            let msg = e.to_string();
            failure = Some(e);
            CoreError::InvalidArgument(msg)
        })
    });
    if let Some(e) = failure {
        return Err(e);
    }
    res?;
    Ok(())
}

fn model_spec(cfg: &RunConfig, input_shape: &[usize], outputs: usize, head: Head) -> ModelSpec {
    let c = &cfg.model;
    let len = input_shape.iter().product();
    let mut s = match c.kind {
        ModelKind::Mlp => ModelSpec::mlp(len, c.hidden, c.extra_layers, outputs, head),
        ModelKind::Conv => {
            let [a, b, d] = [input_shape[0], input_shape[1], input_shape[2]];
            ModelSpec::conv([a, b, d], c.hidden, c.extra_layers, outputs, head)
        }
        ModelKind::Linear => ModelSpec::linear(len, outputs, head),
    };
    s.slope = c.slope;
    s
}

fn mdp_of(env: &EnvConfig) -> Result<(TabularMdp, Encoding)> {
    match env {
        EnvConfig::Chain {
            n_states,
            rewards,
            gamma,
            options,
            encoding,
        } => Ok((chain_mdp_with(*n_states, *rewards, *gamma, *options)?, encoding.clone())),
        EnvConfig::Grid {
            width,
            height,
            gamma,
            slip,
            encoding,
        } => Ok((grid_mdp_with(*width, *height, *gamma, *slip)?, encoding.clone())),
        _ => Err(HarnessError::Report(format!("`{}` is not a tabular environment", env.kind()))),
    }
}

fn glyphs(env: &EnvConfig, n_images: usize) -> Result<(GlyphDataset, tdi_core::env::MaskedEnvConfig)> {
    let EnvConfig::Glyphs {
        n_classes,
        width,
        height,
        data_seed,
        masked,
    } = env
    else {
        return Err(HarnessError::Report("glyph experiment without a glyph environment".into()));
    };
    let per_class = n_images.div_ceil(*n_classes).max(1);
    Ok((glyph_generate(*n_classes, per_class, *data_seed, *width, *height)?, masked.clone()))
}

fn first(xs: &[usize], n: usize) -> Vec<usize> {
    xs[..n.min(xs.len())].to_vec()
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    seeds: BTreeMap<String, u64>,
    dir: &'a Path,
}

impl Ctx<'_> {
    fn seed(&self, name: &str) -> u64 {
        self.seeds[name]
    }

    fn schedule(&self) -> Schedule {
        Schedule {
            steps: self.cfg.steps,
            batch_size: self.cfg.batch_size,
            checkpoint_every: self.cfg.checkpoint_every,
        }
    }

    fn optimizer(&self) -> Result<Optimizer> {
        Ok(Optimizer::new(self.cfg.optimizer.kind(), self.cfg.optimizer.lr())?)
    }

    fn sgd_lr(&self) -> Option<f64> {
        matches!(self.cfg.optimizer.kind(), OptimizerKind::Sgd).then(|| self.cfg.optimizer.lr())
    }

    fn recorder(&self, interference: bool) -> Result<Recorder> {
        Recorder::create(self.dir, &self.cfg.metrics, interference, self.seed("metrics"))
    }

    fn init(&self, m: &mut Manifest, spec: &ModelSpec) -> Result<ValueModel> {
        let model = ValueModel::init(spec, self.seed("init"))?;
        m.model = Some(spec.clone());
        m.data.insert("n_params".into(), json!(model.params().len()));
        Ok(model)
    }

    fn classify(&self, m: &mut Manifest) -> Result<Vec<String>> {
        let n_test = self.cfg.test_size();
        let (ds, _) = glyphs(&self.cfg.env, self.cfg.n_train + n_test)?;
        let ds = ds.with_split(self.cfg.n_train, n_test)?;
        let spec = model_spec(self.cfg, &[1, ds.height, ds.width], ds.n_classes, Head::Classifier);
        let model = self.init(m, &spec)?;
        let load = |idx: &[usize]| -> Result<(Vec<Arc<Tensor>>, Vec<usize>)> {
            let mut xs = Vec::with_capacity(idx.len());
            let mut ys = Vec::with_capacity(idx.len());
            for &i in idx {
                xs.push(Arc::new(model_input(&model, ds.image(i)?)?));
                ys.push(ds.label(i)?);
            }
            Ok((xs, ys))
        };
        let (xs, ys) = load(ds.train())?;
        let (txs, tys) = load(ds.test())?;
        m.data.insert("class_counts".into(), json!(ds.class_counts()));
        let samples: Vec<LossSample> = xs
            .iter()
            .zip(&ys)
            .map(|(x, &y)| LossSample {
                x: x.clone(),
                action: None,
                target: LossTarget::CrossEntropy(y),
            })
            .collect();
        let ids = ds.train().to_vec();
        let batch = self.cfg.batch_size.min(xs.len());
        let mut tester =
            SupervisedLearner::classifier(model.clone(), self.optimizer()?, txs.clone(), tys.clone(), batch.min(txs.len().max(1)))?;
        let mut learner = SupervisedLearner::classifier(model, self.optimizer()?, xs.clone(), ys.clone(), batch)?;
        let mut rec = self.recorder(true)?;
        let seed = self.cfg.seed;
        drive(&mut learner, &self.schedule(), self.seed("train"), |step, l| {
            let model = l.model().clone();
            let train_acc = SupervisedLearner::accuracy(&model, &xs, &ys)?;
            let train_loss = l.mean_loss(&model)?;
            let (test_acc, test_loss) = if txs.is_empty() {
                (None, None)
            } else {
                (
                    Some(SupervisedLearner::accuracy(&model, &txs, &tys)?),
                    Some(tester.mean_loss(&model)?),
                )
            };
            rec.scalar(step, "train_accuracy", Some(train_acc))?;
            rec.scalar(step, "test_accuracy", test_acc)?;
            rec.scalar(step, "train_loss", Some(train_loss))?;
            rec.scalar(step, "test_loss", test_loss)?;
            rec.scalar(step, "gap", test_acc.map(|t| train_acc - t))?;
            rec.scalar(step, "gap_loss", test_loss.map(|t| t - train_loss))?;
            rec.interference(step, &model, model.params(), &samples, &ids)?;
            rec.rho_prime_samples(step, &model, model.params(), &samples, &ids, false)?;
            rec.save_checkpoint(&model, step, seed)
        })?;
        rec.finish()
    }

    fn teacher_data(&self) -> Result<(Vec<Arc<Tensor>>, Vec<f64>, Vec<Arc<Tensor>>, Vec<f64>)> {
        let EnvConfig::Teacher {
            inputs,
            hidden,
            noise,
            data_seed,
        } = self.cfg.env
        else {
            return Err(HarnessError::Report("regression needs the teacher environment".into()));
        };
        let teacher = ValueModel::init(&ModelSpec::mlp(inputs, hidden, 0, 1, Head::Value), rng::derive(data_seed, "teacher"))?;
        let mut r = rng::stream(data_seed, "teacher-data");
        let mut draw = |n: usize| -> Result<(Vec<Arc<Tensor>>, Vec<f64>)> {
            let xs: Vec<Arc<Tensor>> = (0..n)
                .map(|_| Arc::new(Tensor::vector((0..inputs).map(|_| r.random_range(-1.0..=1.0)).collect())))
                .collect();
            let mut ys = Vec::with_capacity(n);
            for x in &xs {
                let f = teacher.scalar_output(x)?;
                let e: f64 = r.sample(StandardNormal);
                ys.push(f + noise * e);
            }
            Ok((xs, ys))
        };
        let (xs, ys) = draw(self.cfg.n_train)?;
        let (txs, tys) = draw(self.cfg.test_size())?;
        Ok((xs, ys, txs, tys))
    }

    fn regress(&self, m: &mut Manifest) -> Result<Vec<String>> {
        let (xs, ys, txs, tys) = self.teacher_data()?;
        let dim = xs[0].len();
        let spec = model_spec(self.cfg, &[dim], 1, Head::Value);
        let model = self.init(m, &spec)?;
        let col = |v: &[f64]| v.iter().map(|&y| vec![y]).collect::<Vec<_>>();
        let batch = self.cfg.batch_size.min(xs.len());
        let mut tester = if txs.is_empty() {
            None
        } else {
            Some(SupervisedLearner::regressor(
                model.clone(),
                self.optimizer()?,
                txs.clone(),
                col(&tys),
                batch.min(txs.len()),
            )?)
        };
        let samples: Vec<LossSample> = xs
            .iter()
            .zip(&ys)
            .map(|(x, &y)| LossSample::half_squared(x.clone(), None, y))
            .collect();
        let ids: Vec<usize> = (0..xs.len()).collect();
        let mut learner = SupervisedLearner::regressor(model, self.optimizer()?, xs.clone(), col(&ys), batch)?;
        let mut rec = self.recorder(true)?;
        let seed = self.cfg.seed;
        drive(&mut learner, &self.schedule(), self.seed("train"), |step, l| {
            let model = l.model().clone();
            let train_loss = l.mean_loss(&model)?;
            let test_loss = tester.as_mut().map(|t| t.mean_loss(&model)).transpose()?;
            rec.scalar(step, "train_loss", Some(train_loss))?;
            rec.scalar(step, "test_loss", test_loss)?;
            rec.scalar(step, "gap", test_loss.map(|t| t - train_loss))?;
            rec.interference(step, &model, model.params(), &samples, &ids)?;
            rec.rho_prime_samples(step, &model, model.params(), &samples, &ids, true)?;
            rec.save_checkpoint(&model, step, seed)
        })?;
        rec.finish()
    }

    fn masked_env(&self, m: &mut Manifest) -> Result<(MaskedImageEnv, Vec<usize>, Vec<usize>)> {
        let n_test = self.cfg.test_size();
        let (ds, masked) = glyphs(&self.cfg.env, self.cfg.n_train + n_test)?;
        let ds = ds.with_split(self.cfg.n_train, n_test)?;
        let (train_seeds, test_seeds) = (ds.train().to_vec(), ds.test().to_vec());
        let env = MaskedImageEnv::new(Arc::new(ds), masked)?;
        m.data.insert("n_actions".into(), json!(env.n_actions()));
        Ok((env, train_seeds, test_seeds))
    }

    #[allow(clippy::too_many_arguments)]
    fn control_scalars(
        &self,
        rec: &mut Recorder,
        step: usize,
        model: &ValueModel,
        env: &mut MaskedImageEnv,
        train_seeds: &[usize],
        test_seeds: &[usize],
        kind: AgentKind,
        gamma: f64,
    ) -> Result<()> {
        let n = self.cfg.metrics.eval_seeds;
        let tr = evaluate_agent(model, env, &first(train_seeds, n), kind, gamma)?;
        let te = if test_seeds.is_empty() {
            None
        } else {
            Some(evaluate_agent(model, env, &first(test_seeds, n), kind, gamma)?)
        };
        rec.scalar(step, "train_return", Some(tr.mean_return))?;
        rec.scalar(step, "test_return", te.as_ref().map(|t| t.mean_return))?;
        rec.scalar(step, "train_loss", Some(tr.mean_loss))?;
        rec.scalar(step, "test_loss", te.as_ref().map(|t| t.mean_loss))?;
        rec.scalar(step, "gap", te.as_ref().map(|t| tr.mean_return - t.mean_return))?;
        rec.scalar(step, "gap_loss", te.as_ref().map(|t| t.mean_loss - tr.mean_loss))?;
        rec.scalar(step, "return", Some(tr.mean_return))
    }

    fn ddqn(&self, m: &mut Manifest) -> Result<Vec<String>> {
        let Experiment::Ddqn { dqn } = self.cfg.experiment else {
            unreachable!("dispatched on kind")
        };
        let (env, train_seeds, test_seeds) = self.masked_env(m)?;
        let spec = model_spec(self.cfg, &env.obs_shape(), env.n_actions(), Head::Value);
        let model = self.init(m, &spec)?;
        let rule = TargetRule::new(self.cfg.target_rule(), model.params())?;
        let mut eval_env = env.clone();
        let mut agent = DqnAgent::new(env, model, self.optimizer()?, rule, dqn, train_seeds.clone())?;
        let mut rec = self.recorder(true)?;
        let opts = TdOptions::new(dqn.gamma, self.cfg.target_rule());
        let seed = self.cfg.seed;
        drive(&mut agent, &self.schedule(), self.seed("train"), |step, a| {
            let model = a.model().clone();
            self.control_scalars(&mut rec, step, &model, &mut eval_env, &train_seeds, &test_seeds, AgentKind::Value, dqn.gamma)?;
            let online = model.params();
            let shadow = a.rule().params(online);
            let buffer = a.buffer();
            let trs: Vec<&Transition> = buffer.iter().collect();
            let targets = if trs.is_empty() {
                vec![]
            } else {
                q_learning_targets(&model, online, shadow, &trs, dqn.gamma, dqn.double)?
            };
            let samples = buffer_samples(&model, buffer, &targets);
            let ids: Vec<usize> = (0..samples.len()).collect();
            rec.interference(step, &model, online, &samples, &ids)?;
            let td: Vec<TdSample> = trs.iter().map(|t| TdSample::from_transition(&model, t)).collect();
            rec.rho_prime_td(step, &model, online, shadow, &td, &ids, &opts)?;
            if !trs.is_empty() {
                let preds = buffer_predictions(&model, online, buffer)?;
                let deltas: Vec<f64> = preds.iter().zip(&targets).map(|(p, y)| p - y).collect();
                rec.sign_variance(step, buffer, &deltas)?;
            } else if rec.toggles().sign_variance {
                rec.scalar(step, "sign_variance", None)?;
            }
            rec.save_checkpoint(&model, step, seed)
        })?;
        m.data.insert("buffer_len".into(), json!(agent.buffer().len()));
        rec.finish()
    }

    fn reinforce(&self, m: &mut Manifest, gamma: f64) -> Result<Vec<String>> {
        let (env, train_seeds, test_seeds) = self.masked_env(m)?;
        let spec = model_spec(self.cfg, &env.obs_shape(), env.n_actions(), Head::Classifier);
        let model = self.init(m, &spec)?;
        let mut eval_env = env.clone();
        let mut agent = ReinforceAgent::new(env, model, self.optimizer()?, gamma, train_seeds.clone())?;
        let mut rec = self.recorder(true)?;
        let seed = self.cfg.seed;
        let n_eval = self.cfg.metrics.eval_seeds;
        drive(&mut agent, &self.schedule(), self.seed("train"), |step, a| {
            let model = a.model().clone();
            self.control_scalars(&mut rec, step, &model, &mut eval_env, &train_seeds, &test_seeds, AgentKind::Policy, gamma)?;
            let samples = greedy_samples(&model, &mut eval_env, &first(&train_seeds, n_eval))?;
            let ids: Vec<usize> = (0..samples.len()).collect();
            rec.interference(step, &model, model.params(), &samples, &ids)?;
            rec.rho_prime_samples(step, &model, model.params(), &samples, &ids, false)?;
            rec.save_checkpoint(&model, step, seed)
        })?;
        rec.finish()
    }

    fn buffer_task(&self, m: &mut Manifest) -> Result<Vec<String>> {
        let (mdp, enc) = mdp_of(&self.cfg.env)?;
        let q = value_iteration(&mdp)?;
        let (objective, eps) = match self.cfg.experiment {
            Experiment::PolicyEvalQl { double, expert_epsilon } => (BufferObjective::QLearning { double }, expert_epsilon),
            Experiment::PolicyEvalTdLambda {
                lambda,
                refresh,
                expert_epsilon,
            } => (BufferObjective::TdLambda { lambda, refresh }, expert_epsilon),
            Experiment::Distill { target, expert_epsilon } => (BufferObjective::Distill { target }, expert_epsilon),
            _ => unreachable!("dispatched on kind"),
        };
        let train_buf = Arc::new(make_expert_buffer(&mdp, &q, eps, self.cfg.n_train, self.seed("buffer"), &enc)?);
        let n_test = self.cfg.test_size();
        let test_buf = if n_test > 0 {
            Some(Arc::new(make_expert_buffer(&mdp, &q, eps, n_test, self.seed("test_buffer"), &enc)?))
        } else {
            None
        };
        m.data.insert("buffer_len".into(), json!(train_buf.len()));
        m.data.insert("test_buffer_len".into(), json!(test_buf.as_ref().map(|b| b.len())));
        m.data.insert("n_trajectories".into(), json!(train_buf.trajectories().len()));
        let default_outputs = match objective {
            BufferObjective::QLearning { .. } => mdp.n_actions(),
            _ => 1,
        };
        let outputs = self.cfg.model.outputs.unwrap_or(default_outputs);
        let spec = model_spec(self.cfg, &[enc.dim(&mdp)], outputs, Head::Value);
        let model = self.init(m, &spec)?;
        let expert = TabularExpert(q);
        let expert_ref: Option<&dyn Expert> = Some(&expert);
        let rule = TargetRule::new(self.cfg.target_rule(), model.params())?;
        let gamma = mdp.gamma();
        let mut learner = BufferLearner::new(
            model,
            self.optimizer()?,
            rule,
            train_buf.clone(),
            objective,
            gamma,
            self.cfg.batch_size,
            expert_ref,
        )?;
        let mut rec = self.recorder(true)?;
        let opts = TdOptions::new(gamma, self.cfg.target_rule());
        let td: Vec<TdSample> = {
            let m0 = learner.model();
            train_buf.iter().map(|t| TdSample::from_transition(m0, t)).collect()
        };
        let ids: Vec<usize> = (0..train_buf.len()).collect();
        let seed = self.cfg.seed;
        let sgd_lr = self.sgd_lr();
        drive(&mut learner, &self.schedule(), self.seed("train"), |step, l| {
            let model = l.model().clone();
            let online = model.params();
            let train_loss = objective_loss(&model, &train_buf, objective, gamma, expert_ref)?;
            let test_loss = test_buf
                .as_ref()
                .map(|b| objective_loss(&model, b, objective, gamma, expert_ref))
                .transpose()?;
            rec.scalar(step, "train_loss", Some(train_loss))?;
            rec.scalar(step, "test_loss", test_loss)?;
            rec.scalar(step, "gap", test_loss.map(|t| t - train_loss))?;
            let targets = l.targets_for(online, &ids)?;
            let samples = buffer_samples(&model, &train_buf, &targets);
            rec.interference(step, &model, online, &samples, &ids)?;
            match objective {
                BufferObjective::Distill { .. } => rec.rho_prime_samples(step, &model, online, &samples, &ids, true)?,
                _ => {
                    let shadow = l.rule().params(online).clone();
                    rec.rho_prime_td(step, &model, online, &shadow, &td, &ids, &opts)?
                }
            }
            let preds = buffer_predictions(&model, online, &train_buf)?;
            let deltas: Vec<f64> = preds.iter().zip(&targets).map(|(p, y)| p - y).collect();
            rec.sign_variance(step, &train_buf, &deltas)?;
            rec.curves(step, l, sgd_lr)?;
            rec.save_checkpoint(&model, step, seed)
        })?;
        rec.finish()
    }

    fn tabular(&self, m: &mut Manifest, alpha: f64, policy: &PolicySpec) -> Result<Vec<String>> {
        let (mdp, _) = mdp_of(&self.cfg.env)?;
        let pi = match policy {
            PolicySpec::Greedy => {
                let q = value_iteration(&mdp)?;
                let actions: Vec<usize> = q.iter().map(|r| argmax(r)).collect();
                Policy::deterministic(mdp.n_actions(), &actions)?
            }
            PolicySpec::Uniform => Policy::uniform(mdp.n_states(), mdp.n_actions()),
            PolicySpec::Deterministic { actions } => Policy::deterministic(mdp.n_actions(), actions)?,
        };
        let v_dp = dp_policy_evaluation(&mdp, &pi)?;
        let v_td = tabular_td0(&mdp, &pi, alpha, self.cfg.steps, self.seed("train"))?;
        let sup = v_dp.iter().zip(&v_td).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        m.data.insert("n_states".into(), json!(mdp.n_states()));
        let mut rec = Recorder::create(self.dir, &crate::config::MetricToggles::none(), false, self.seed("metrics"))?;
        let step = self.cfg.steps;
        rec.scalar(step, "sup_error", Some(sup))?;
        for (i, (td, dp)) in v_td.iter().zip(&v_dp).enumerate() {
            rec.scalar(step, &format!("v_td/s{i}"), Some(*td))?;
            rec.scalar(step, &format!("v_dp/s{i}"), Some(*dp))?;
        }
        rec.finish()
    }
}

/// Mean squared objective error on `buffer` with targets bootstrapped from
/// the current parameters.
fn objective_loss(
    model: &ValueModel,
    buffer: &Arc<ReplayBuffer>,
    objective: BufferObjective,
    gamma: f64,
    expert: Option<&dyn Expert>,
) -> Result<f64> {
    let rule = TargetRule::new(TargetKind::Online, model.params())?;
    let opt = Optimizer::new(OptimizerKind::Sgd, 0.0)?;
    let eval = BufferLearner::new(model.clone(), opt, rule, buffer.clone(), objective, gamma, 1, expert)?;
    let idx: Vec<usize> = (0..buffer.len()).collect();
    let y = eval.targets_for(model.params(), &idx)?;
    let p = buffer_predictions(model, model.params(), buffer)?;
    let sq: Vec<f64> = p.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).collect();
    Ok(mean_of(&sq).unwrap_or(0.0))
}

/// States along greedy rollouts, each labelled with its greedy action.
fn greedy_samples(model: &ValueModel, env: &mut MaskedImageEnv, seeds: &[usize]) -> Result<Vec<LossSample>> {
    let mut out = Vec::new();
    for &s in seeds {
        let mut x = model_input(model, env.reset(s)?)?;
        loop {
            let logits = model.forward(&model.single(&x)?)?;
            let a = argmax(logits.row(0));
            let res = env.step(a)?;
            out.push(LossSample {
                x: Arc::new(x),
                action: None,
                target: LossTarget::CrossEntropy(a),
            });
            if res.done {
                break;
            }
            x = model_input(model, res.obs)?;
        }
    }
    Ok(out)
}

/// Summary of the environment a config describes, for `env inspect`.
pub fn inspect(cfg: &RunConfig) -> Result<Value> {
    let mut out = serde_json::Map::new();
    out.insert("kind".into(), json!(cfg.env.kind()));
    match &cfg.env {
        EnvConfig::Glyphs { n_classes, .. } => {
            let n = cfg.n_train + cfg.test_size();
            let (ds, masked) = glyphs(&cfg.env, n.max(*n_classes))?;
            out.insert("n_images".into(), json!(ds.len()));
            out.insert("class_counts".into(), json!(ds.class_counts()));
            out.insert("image_shape".into(), json!([1, ds.height, ds.width]));
            let env = MaskedImageEnv::new(Arc::new(ds), masked)?;
            out.insert("n_actions".into(), json!(env.n_actions()));
            out.insert("obs_shape".into(), json!(env.obs_shape()));
        }
        EnvConfig::Teacher { inputs, hidden, noise, .. } => {
            out.insert("inputs".into(), json!(inputs));
            out.insert("teacher_hidden".into(), json!(hidden));
            out.insert("noise".into(), json!(noise));
        }
        EnvConfig::Chain { .. } | EnvConfig::Grid { .. } => {
            let (mdp, enc) = mdp_of(&cfg.env)?;
            let q = value_iteration(&mdp)?;
            let v: Vec<f64> = q.iter().map(|r| r.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
            out.insert("n_states".into(), json!(mdp.n_states()));
            out.insert("n_actions".into(), json!(mdp.n_actions()));
            out.insert("gamma".into(), json!(mdp.gamma()));
            out.insert("feature_dim".into(), json!(enc.dim(&mdp)));
            out.insert("v_star".into(), json!(v));
            if cfg.experiment.uses_buffer() && cfg.n_train > 0 {
                let eps = match cfg.experiment {
                    Experiment::PolicyEvalQl { expert_epsilon, .. }
                    | Experiment::PolicyEvalTdLambda { expert_epsilon, .. }
                    | Experiment::Distill { expert_epsilon, .. } => expert_epsilon,
                    _ => 0.0,
                };
                let seed = crate::manifest::seed_map(cfg.seed)["buffer"];
                let b = make_expert_buffer(&mdp, &q, eps, cfg.n_train, seed, &enc)?;
                out.insert("buffer_len".into(), json!(b.len()));
                out.insert("n_trajectories".into(), json!(b.trajectories().len()));
            }
        }
    }
    Ok(Value::Object(out))
}
