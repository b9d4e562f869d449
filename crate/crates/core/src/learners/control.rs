//! Control agents on the masked-image environment and seed-split evaluation.

use std::collections::HashMap;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use tdi_autodiff::{GradProgram, Tensor};

use super::losses::q_values;
use super::optim::Optimizer;
use super::reinforce::{reinforce_gradient, reinforce_surrogate, EpisodeStep};
use super::targets::TargetRule;
use super::train::{q_learning_targets, Learner};
use crate::env::{argmax, MaskedImageEnv, Obs, ReplayBuffer, Transition};
use crate::error::{CoreError, Result};
use crate::models::{ModelKind, ValueModel};
use crate::rng::Rng;

/// Reshape a `[1, H, W]` observation to what the model expects.
pub fn model_input(model: &ValueModel, obs: Tensor) -> Result<Tensor> {
    match model.spec().kind {
        ModelKind::Conv => Ok(obs),
        ModelKind::Mlp | ModelKind::Linear => {
            let n = obs.len();
            Ok(Tensor::new(vec![n], obs.into_data())?)
        }
    }
}

fn check_actions(model: &ValueModel, env: &MaskedImageEnv) -> Result<()> {
    if model.spec().outputs != env.n_actions() {
        return Err(CoreError::Config(format!(
            "model has {} outputs but the environment has {} actions",
            model.spec().outputs,
            env.n_actions()
        )));
    }
    let probe = Tensor::zeros(&env.obs_shape());
    model.single(&model_input(model, probe)?)?;
    Ok(())
}

fn pick_seed(seeds: &[usize], rng: &mut Rng) -> usize {
    seeds[rng.random_range(0..seeds.len())]
}

fn sample_softmax(logits: &[f64], rng: &mut Rng) -> usize {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    w.len() - 1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DqnConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps before the first gradient step.
    pub learn_start: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: usize,
    pub double: bool,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            gamma: 0.99,
            batch_size: 32,
            buffer_capacity: 10_000,
            learn_start: 100,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 5_000,
            double: true,
        }
    }
}

impl DqnConfig {
    pub fn epsilon(&self, step: usize) -> f64 {
        if step >= self.epsilon_decay_steps {
            return self.epsilon_end;
        }
        let f = step as f64 / self.epsilon_decay_steps as f64;
        self.epsilon_start + f * (self.epsilon_end - self.epsilon_start)
    }
}

struct Live {
    obs: Obs,
    trajectory: u64,
    step: usize,
}

/// Online (double) DQN: one environment step and, once warmed up, one
/// minibatch update per `step`.
pub struct DqnAgent {
    env: MaskedImageEnv,
    model: ValueModel,
    opt: Optimizer,
    rule: TargetRule,
    cfg: DqnConfig,
    buffer: ReplayBuffer,
    seeds: Vec<usize>,
    live: Option<Live>,
    env_steps: usize,
    episodes: u64,
    programs: HashMap<usize, GradProgram>,
}

impl DqnAgent {
    pub fn new(
        env: MaskedImageEnv,
        model: ValueModel,
        opt: Optimizer,
        rule: TargetRule,
        cfg: DqnConfig,
        seeds: Vec<usize>,
    ) -> Result<Self> {
        check_actions(&model, &env)?;
        if seeds.is_empty() {
            return Err(CoreError::Config("no training seeds".into()));
        }
        if cfg.batch_size == 0 || cfg.buffer_capacity < cfg.batch_size {
            return Err(CoreError::Config("buffer capacity must hold a minibatch".into()));
        }
        for e in [cfg.epsilon_start, cfg.epsilon_end, cfg.gamma] {
            if !(0.0..=1.0).contains(&e) {
                return Err(CoreError::Config(format!("{e} outside [0, 1]")));
            }
        }
        Ok(DqnAgent {
            env,
            model,
            opt,
            rule,
            buffer: ReplayBuffer::new(cfg.buffer_capacity),
            cfg,
            seeds,
            live: None,
            env_steps: 0,
            episodes: 0,
            programs: HashMap::new(),
        })
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn rule(&self) -> &TargetRule {
        &self.rule
    }

    pub fn config(&self) -> &DqnConfig {
        &self.cfg
    }

    fn act(&mut self, rng: &mut Rng) -> Result<()> {
        if self.live.is_none() {
            let seed = pick_seed(&self.seeds, rng);
            let x = model_input(&self.model, self.env.reset(seed)?)?;
            self.live = Some(Live {
                obs: Obs::new(seed, x),
                trajectory: self.episodes,
                step: 0,
            });
            self.episodes += 1;
        }
        let live = self.live.take().expect("live episode");
        let eps = self.cfg.epsilon(self.env_steps);
        let action = if rng.random::<f64>() < eps {
            rng.random_range(0..self.env.n_actions())
        } else {
            argmax(&q_values(&self.model, self.model.params(), &live.obs)?)
        };
        let res = self.env.step(action)?;
        let next = Obs::new(live.obs.id, model_input(&self.model, res.obs)?);
        self.buffer.push(Transition {
            state: live.obs,
            action,
            reward: res.reward,
            next_state: next.clone(),
            done: res.done,
            trajectory: live.trajectory,
            step: live.step,
        });
        self.env_steps += 1;
        if !res.done {
            self.live = Some(Live {
                obs: next,
                trajectory: live.trajectory,
                step: live.step + 1,
            });
        }
        Ok(())
    }
}

impl Learner for DqnAgent {
    fn step(&mut self, rng: &mut Rng) -> Result<f64> {
        self.act(rng)?;
        if self.buffer.len() < self.cfg.learn_start.max(self.cfg.batch_size) {
            return Ok(f64::NAN);
        }
        let n = self.cfg.batch_size;
        let idx = self.buffer.sample_indices(n, rng)?;
        let trs: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect::<Result<_>>()?;
        let online = self.model.params().clone();
        let y = q_learning_targets(
            &self.model,
            &online,
            self.rule.params(&online),
            &trs,
            self.cfg.gamma,
            self.cfg.double,
        )?;
        let xs: Vec<&Tensor> = trs.iter().map(|t| t.state.x.as_ref()).collect();
        let x = Tensor::stack(&xs)?;
        let a = Tensor::vector(trs.iter().map(|t| t.action as f64).collect());
        let yt = Tensor::new(vec![n, 1], y)?;
        if !self.programs.contains_key(&n) {
            self.programs.insert(n, super::train::squared_program(&self.model, n)?);
        }
        let g = self.programs[&n].run(&online, &[&x, &a, &yt])?;
        self.opt.step(self.model.params_mut(), &g.grad)?;
        self.rule.after_step(self.model.params())?;
        Ok(g.value)
    }

    fn model(&self) -> &ValueModel {
        &self.model
    }
}

/// REINFORCE with a softmax policy head; one episode per `step`.
pub struct ReinforceAgent {
    env: MaskedImageEnv,
    model: ValueModel,
    opt: Optimizer,
    gamma: f64,
    seeds: Vec<usize>,
}

impl ReinforceAgent {
    pub fn new(env: MaskedImageEnv, model: ValueModel, opt: Optimizer, gamma: f64, seeds: Vec<usize>) -> Result<Self> {
        check_actions(&model, &env)?;
        if seeds.is_empty() {
            return Err(CoreError::Config("no training seeds".into()));
        }
        Ok(ReinforceAgent {
            env,
            model,
            opt,
            gamma,
            seeds,
        })
    }

    pub fn sample_episode(&mut self, seed: usize, rng: &mut Rng) -> Result<Vec<EpisodeStep>> {
        let mut x = model_input(&self.model, self.env.reset(seed)?)?;
        let mut ep = Vec::new();
        loop {
            let logits = self.model.forward(&self.model.single(&x)?)?;
            let action = sample_softmax(logits.row(0), rng);
            let res = self.env.step(action)?;
            ep.push(EpisodeStep {
                state: Obs::new(seed, x),
                action,
                reward: res.reward,
            });
            if res.done {
                return Ok(ep);
            }
            x = model_input(&self.model, res.obs)?;
        }
    }
}

impl Learner for ReinforceAgent {
    fn step(&mut self, rng: &mut Rng) -> Result<f64> {
        let seed = pick_seed(&self.seeds, rng);
        let ep = self.sample_episode(seed, rng)?;
        let g = reinforce_gradient(&self.model, self.model.params(), &ep, self.gamma)?;
        self.opt.step(self.model.params_mut(), &g.grad)?;
        Ok(g.value)
    }

    fn model(&self) -> &ValueModel {
        &self.model
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Action values; evaluation loss is the one-step Q-learning loss.
    Value,
    /// Softmax policy; evaluation loss is the REINFORCE surrogate per step.
    Policy,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalStats {
    pub returns: Vec<f64>,
    pub mean_return: f64,
    pub mean_loss: f64,
}

/// Greedy rollouts, one per seed.
pub fn evaluate_agent(
    model: &ValueModel,
    env: &mut MaskedImageEnv,
    seeds: &[usize],
    kind: AgentKind,
    gamma: f64,
) -> Result<EvalStats> {
    if seeds.is_empty() {
        return Err(CoreError::InsufficientData("empty seed set".into()));
    }
    let mut returns = Vec::with_capacity(seeds.len());
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    for &seed in seeds {
        let mut x = model_input(model, env.reset(seed)?)?;
        let mut steps = Vec::new();
        let mut nexts = Vec::new();
        let mut dones = Vec::new();
        loop {
            let out = model.forward(&model.single(&x)?)?;
            let action = argmax(out.row(0));
            let res = env.step(action)?;
            let next = model_input(model, res.obs)?;
            steps.push(EpisodeStep {
                state: Obs::new(seed, x),
                action,
                reward: res.reward,
            });
            nexts.push(next.clone());
            dones.push(res.done);
            if res.done {
                break;
            }
            x = next;
        }
        let mut g = 0.0;
        for s in steps.iter().rev() {
            g = s.reward + gamma * g;
        }
        returns.push(g);
        match kind {
            AgentKind::Value => {
                for ((s, n), d) in steps.iter().zip(&nexts).zip(&dones) {
                    let q = q_values(model, model.params(), &s.state)?[s.action];
                    let y = if *d {
                        s.reward
                    } else {
                        let qn = model.forward(&model.single(n)?)?;
                        s.reward + gamma * qn.row(0)[argmax(qn.row(0))]
                    };
                    loss_sum += (q - y).powi(2);
                    loss_count += 1;
                }
            }
            AgentKind::Policy => {
                loss_sum += reinforce_surrogate(model, model.params(), &steps, gamma)?;
                loss_count += steps.len();
            }
        }
    }
    let mean_return = returns.iter().sum::<f64>() / returns.len() as f64;
    Ok(EvalStats {
        returns,
        mean_return,
        mean_loss: loss_sum / loss_count as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{glyph_generate, MaskedEnvConfig};
    use crate::learners::optim::OptimizerKind;
    use crate::learners::targets::TargetKind;
    use crate::learners::train::{train, Schedule};
    use crate::models::{Head, ModelSpec};
    use std::sync::Arc;

    fn env() -> MaskedImageEnv {
        let data = Arc::new(glyph_generate(3, 4, 5, 16, 16).unwrap());
        MaskedImageEnv::new(data, MaskedEnvConfig { window: 8, step: 4, max_steps: 6 }).unwrap()
    }

    #[test]
    fn dqn_runs_deterministically() {
        let run = || {
            let e = env();
            let m = ValueModel::init(&ModelSpec::mlp(256, 8, 0, e.n_actions(), Head::Value), 1).unwrap();
            let rule = TargetRule::new(TargetKind::Frozen { period: 20 }, m.params()).unwrap();
            let cfg = DqnConfig { learn_start: 16, batch_size: 8, epsilon_decay_steps: 50, ..DqnConfig::default() };
            let opt = Optimizer::new(OptimizerKind::adam(), 1e-3).unwrap();
            let mut a = DqnAgent::new(e, m, opt, rule, cfg, vec![0, 1, 2]).unwrap();
            let log = train(&mut a, &Schedule { steps: 60, batch_size: 8, checkpoint_every: 0 }, 3, |_, _| Ok(())).unwrap();
            assert!(log[0].loss.is_nan() && log[59].loss.is_finite());
            a.model().params().clone()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn reinforce_and_eval() {
        let mut e = env();
        let m = ValueModel::init(&ModelSpec::mlp(256, 8, 0, e.n_actions(), Head::Classifier), 2).unwrap();
        let opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
        let mut a = ReinforceAgent::new(e.clone(), m, opt, 0.99, vec![0, 1]).unwrap();
        train(&mut a, &Schedule { steps: 5, batch_size: 1, checkpoint_every: 0 }, 1, |_, _| Ok(())).unwrap();
        let s = evaluate_agent(a.model(), &mut e, &[0, 1], AgentKind::Policy, 0.99).unwrap();
        assert_eq!(s.returns.len(), 2);
        assert!(s.returns.iter().all(|r| (0.0..=1.0).contains(r)));
        assert!(evaluate_agent(a.model(), &mut e, &[], AgentKind::Value, 0.9).is_err());
    }

    #[test]
    fn epsilon_schedule() {
        let c = DqnConfig { epsilon_start: 1.0, epsilon_end: 0.1, epsilon_decay_steps: 10, ..DqnConfig::default() };
        assert_eq!(c.epsilon(0), 1.0);
        assert!((c.epsilon(5) - 0.55).abs() < 1e-12);
        assert_eq!(c.epsilon(50), 0.1);
    }

    #[test]
    fn action_count_mismatch_rejected() {
        let e = env();
        let m = ValueModel::init(&ModelSpec::mlp(256, 8, 0, 2, Head::Value), 1).unwrap();
        let opt = Optimizer::new(OptimizerKind::Sgd, 0.1).unwrap();
        assert!(ReinforceAgent::new(e, m, opt, 0.9, vec![0]).is_err());
    }
}
