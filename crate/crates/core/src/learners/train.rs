//! Minibatch training loops for supervised and replay-buffer objectives.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tdi_autodiff::{GradProgram, GradResult, ParamVector, Tensor};

use super::losses::{distill_targets, q_values_batch, Expert};
use super::optim::Optimizer;
use super::returns::{LambdaTargetSet, ModelValue};
use super::targets::TargetRule;
use crate::env::{argmax, mc_returns, Obs, ReplayBuffer, Transition};
use crate::error::{CoreError, Result};
use crate::models::ValueModel;
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub steps: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Checkpoint cadence in steps; 0 disables intermediate checkpoints.
    #[serde(default)]
    pub checkpoint_every: usize,
}

fn default_batch() -> usize {
    32
}

/// One training process: owns its model, optimizer and data.
pub trait Learner {
    /// One optimizer step; returns the minibatch loss before the step.
    fn step(&mut self, rng: &mut Rng) -> Result<f64>;
    fn model(&self) -> &ValueModel;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
}

/// Run `schedule.steps` steps. `on_checkpoint` sees step 0, every
/// `checkpoint_every` steps and the final step.
pub fn train<L: Learner>(
    learner: &mut L,
    schedule: &Schedule,
    seed: u64,
    mut on_checkpoint: impl FnMut(usize, &mut L) -> Result<()>,
) -> Result<Vec<LossRow>> {
    let mut r = rng::stream(seed, "train");
    let mut log = Vec::with_capacity(schedule.steps);
    on_checkpoint(0, learner)?;
    for step in 1..=schedule.steps {
        let loss = learner.step(&mut r)?;
        log.push(LossRow { step, loss });
        let due = schedule.checkpoint_every > 0 && step % schedule.checkpoint_every == 0;
        if due || step == schedule.steps {
            on_checkpoint(step, learner)?;
        }
    }
    Ok(log)
}

fn stack_obs<'a>(xs: impl Iterator<Item = &'a Tensor>) -> Result<Tensor> {
    let v: Vec<&Tensor> = xs.collect();
    Ok(Tensor::stack(&v)?)
}

/// Mean squared error between the (action-selected) prediction and targets.
/// Inputs: `x [n,…]`, `actions [n]`, `y [n,1]`.
pub(crate) fn squared_program(model: &ValueModel, n: usize) -> Result<GradProgram> {
    let mut fg = model.forward_graph(n)?;
    let g = &mut fg.graph;
    let a = g.input(&[n]);
    let y = g.input(&[n, 1]);
    let pred = if model.spec().outputs == 1 {
        fg.output
    } else {
        g.gather(fg.output, a)?
    };
    let se = g.squared_error(pred, y)?;
    let loss = g.scale(se, 1.0 / n as f64)?;
    Ok(GradProgram::new(&fg.graph, loss)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisedTask {
    Classify,
    Regress,
}

/// Classification (mean cross-entropy) or regression (mean Σ(f − y)²).
pub struct SupervisedLearner {
    model: ValueModel,
    opt: Optimizer,
    task: SupervisedTask,
    xs: Vec<Arc<Tensor>>,
    labels: Vec<usize>,
    ys: Vec<Vec<f64>>,
    batch: usize,
    programs: HashMap<usize, GradProgram>,
}

impl SupervisedLearner {
    pub fn classifier(model: ValueModel, opt: Optimizer, xs: Vec<Arc<Tensor>>, labels: Vec<usize>, batch: usize) -> Result<Self> {
        if xs.is_empty() || xs.len() != labels.len() {
            return Err(CoreError::Config("examples and labels must be nonempty and aligned".into()));
        }
        if labels.iter().any(|&l| l >= model.spec().outputs) {
            return Err(CoreError::Config("label exceeds output count".into()));
        }
        Self::build(model, opt, SupervisedTask::Classify, xs, labels, vec![], batch)
    }

    pub fn regressor(model: ValueModel, opt: Optimizer, xs: Vec<Arc<Tensor>>, ys: Vec<Vec<f64>>, batch: usize) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(CoreError::Config("examples and targets must be nonempty and aligned".into()));
        }
        if ys.iter().any(|y| y.len() != model.spec().outputs) {
            return Err(CoreError::Config("target width must equal output count".into()));
        }
        Self::build(model, opt, SupervisedTask::Regress, xs, vec![], ys, batch)
    }

    fn build(
        model: ValueModel,
        opt: Optimizer,
        task: SupervisedTask,
        xs: Vec<Arc<Tensor>>,
        labels: Vec<usize>,
        ys: Vec<Vec<f64>>,
        batch: usize,
    ) -> Result<Self> {
        if batch == 0 {
            return Err(CoreError::Config("batch size must be positive".into()));
        }
        for x in &xs {
            model.single(x)?;
        }
        Ok(SupervisedLearner {
            model,
            opt,
            task,
            xs,
            labels,
            ys,
            batch,
            programs: HashMap::new(),
        })
    }

    fn program(&mut self, n: usize) -> Result<&GradProgram> {
        if !self.programs.contains_key(&n) {
            let mut fg = self.model.forward_graph(n)?;
            let g = &mut fg.graph;
            let loss = match self.task {
                SupervisedTask::Classify => {
                    let l = g.input(&[n]);
                    let ce = g.cross_entropy(fg.output, l)?;
                    g.scale(ce, 1.0 / n as f64)?
                }
                SupervisedTask::Regress => {
                    let y = g.input(&[n, self.model.spec().outputs]);
                    let se = g.squared_error(fg.output, y)?;
                    g.scale(se, 1.0 / n as f64)?
                }
            };
            self.programs.insert(n, GradProgram::new(&fg.graph, loss)?);
        }
        Ok(&self.programs[&n])
    }

    /// Mean loss and gradient over the given example indices.
    pub fn batch_grad(&mut self, params: &ParamVector, idx: &[usize]) -> Result<GradResult> {
        let x = stack_obs(idx.iter().map(|&i| self.xs[i].as_ref()))?;
        let target = match self.task {
            SupervisedTask::Classify => Tensor::vector(idx.iter().map(|&i| self.labels[i] as f64).collect()),
            SupervisedTask::Regress => Tensor::new(
                vec![idx.len(), self.model.spec().outputs],
                idx.iter().flat_map(|&i| self.ys[i].iter().copied()).collect(),
            )?,
        };
        let prog = self.program(idx.len())?;
        Ok(prog.run(params, &[&x, &target])?)
    }

    /// Fraction of examples whose argmax output equals the label.
    pub fn accuracy(model: &ValueModel, xs: &[Arc<Tensor>], labels: &[usize]) -> Result<f64> {
        if xs.is_empty() {
            return Err(CoreError::InsufficientData("empty evaluation set".into()));
        }
        let out = model.forward(&stack_obs(xs.iter().map(|x| x.as_ref()))?)?;
        let hits = (0..xs.len()).filter(|&r| argmax(out.row(r)) == labels[r]).count();
        Ok(hits as f64 / xs.len() as f64)
    }

    /// Mean loss of a model over a dataset (cross-entropy or Σ(f − y)²).
    pub fn mean_loss(&mut self, model: &ValueModel) -> Result<f64> {
        let idx: Vec<usize> = (0..self.xs.len()).collect();
        let mut total = 0.0;
        for chunk in idx.chunks(256) {
            total += self.batch_grad(model.params(), chunk)?.value * chunk.len() as f64;
        }
        Ok(total / idx.len() as f64)
    }
}

impl Learner for SupervisedLearner {
    fn step(&mut self, rng: &mut Rng) -> Result<f64> {
        let n = self.batch.min(self.xs.len());
        let idx = rand::seq::index::sample(rng, self.xs.len(), n).into_vec();
        let params = self.model.params().clone();
        let g = self.batch_grad(&params, &idx)?;
        self.opt.step(self.model.params_mut(), &g.grad)?;
        Ok(g.value)
    }

    fn model(&self) -> &ValueModel {
        &self.model
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillKind {
    Mc,
    Reg,
    TdStar,
}

/// Objectives trained from a fixed replay buffer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum BufferObjective {
    /// Regress to λ-returns recomputed from the bootstrap parameters every
    /// `refresh` steps.
    TdLambda { lambda: f64, refresh: usize },
    /// One-step Q-learning targets; `double` selects the double-Q target.
    QLearning { double: bool },
    Distill { target: DistillKind },
}

/// Policy evaluation and distillation on a replay buffer.
pub struct BufferLearner {
    model: ValueModel,
    opt: Optimizer,
    rule: TargetRule,
    buffer: Arc<ReplayBuffer>,
    objective: BufferObjective,
    gamma: f64,
    batch: usize,
    fixed_targets: Option<Vec<f64>>,
    lambda_set: Option<LambdaTargetSet>,
    steps: usize,
    programs: HashMap<usize, GradProgram>,
}

impl BufferLearner {
    pub fn new(
        model: ValueModel,
        opt: Optimizer,
        rule: TargetRule,
        buffer: Arc<ReplayBuffer>,
        objective: BufferObjective,
        gamma: f64,
        batch: usize,
        expert: Option<&dyn Expert>,
    ) -> Result<Self> {
        if buffer.is_empty() || batch == 0 {
            return Err(CoreError::Config("buffer and batch size must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(CoreError::Config(format!("discount {gamma} outside [0, 1]")));
        }
        let n_o = model.spec().outputs;
        if n_o > 1 {
            if let Some(t) = buffer.iter().find(|t| t.action >= n_o) {
                return Err(CoreError::Config(format!("buffer action {} exceeds output count", t.action)));
            }
        }
        model.single(&buffer.get(0)?.state.x)?;
        let fixed_targets = match objective {
            BufferObjective::Distill { target } => {
                let expert = expert.ok_or(CoreError::Config("distillation needs expert values".into()))?;
                let mut out = Vec::with_capacity(buffer.len());
                for r in buffer.trajectories() {
                    let traj = buffer.slice(r);
                    let g = match target {
                        DistillKind::Mc => mc_returns(&traj, gamma)?,
                        _ => vec![0.0; traj.len()],
                    };
                    for (t, gt) in traj.iter().zip(g) {
                        let d = distill_targets(t, expert, gt, gamma)?;
                        out.push(match target {
                            DistillKind::Mc => d.mc,
                            DistillKind::Reg => d.reg,
                            DistillKind::TdStar => d.td_star,
                        });
                    }
                }
                Some(out)
            }
            BufferObjective::TdLambda { lambda, refresh } => {
                if refresh == 0 || !(0.0..=1.0).contains(&lambda) {
                    return Err(CoreError::Config("λ must be in [0, 1] and refresh positive".into()));
                }
                None
            }
            BufferObjective::QLearning { .. } => None,
        };
        let mut me = BufferLearner {
            model,
            opt,
            rule,
            buffer,
            objective,
            gamma,
            batch,
            fixed_targets,
            lambda_set: None,
            steps: 0,
            programs: HashMap::new(),
        };
        me.refresh_lambda()?;
        Ok(me)
    }

    fn refresh_lambda(&mut self) -> Result<()> {
        if let BufferObjective::TdLambda { lambda, .. } = self.objective {
            let values = ModelValue {
                model: &self.model,
                params: self.rule.params(self.model.params()),
            };
            self.lambda_set = Some(LambdaTargetSet::compute(
                &self.buffer,
                &values,
                self.gamma,
                lambda,
                self.rule.generation(),
            )?);
        }
        Ok(())
    }

    pub fn buffer(&self) -> &Arc<ReplayBuffer> {
        &self.buffer
    }

    pub fn rule(&self) -> &TargetRule {
        &self.rule
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    pub fn objective(&self) -> BufferObjective {
        self.objective
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn lambda_targets(&self) -> Option<&LambdaTargetSet> {
        self.lambda_set.as_ref()
    }

    /// Regression targets for buffer indices when the online parameters are
    /// `online` (bootstrap parameters follow the target rule).
    pub fn targets_for(&self, online: &ParamVector, idx: &[usize]) -> Result<Vec<f64>> {
        match self.objective {
            BufferObjective::Distill { .. } => {
                let t = self.fixed_targets.as_ref().expect("distill targets");
                Ok(idx.iter().map(|&i| t[i]).collect())
            }
            BufferObjective::TdLambda { .. } => {
                let t = &self.lambda_set.as_ref().expect("λ-targets").targets;
                Ok(idx.iter().map(|&i| t[i]).collect())
            }
            BufferObjective::QLearning { double } => {
                let shadow = self.rule.params(online);
                let trs: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect::<Result<_>>()?;
                q_learning_targets(&self.model, online, shadow, &trs, self.gamma, double)
            }
        }
    }

    fn program(&mut self, n: usize) -> Result<&GradProgram> {
        if !self.programs.contains_key(&n) {
            self.programs.insert(n, squared_program(&self.model, n)?);
        }
        Ok(&self.programs[&n])
    }

    /// Mean squared loss and gradient for indices against explicit targets.
    pub fn batch_grad(&mut self, params: &ParamVector, idx: &[usize], targets: &[f64]) -> Result<GradResult> {
        let trs: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i)).collect::<Result<_>>()?;
        let x = stack_obs(trs.iter().map(|t| t.state.x.as_ref()))?;
        let a = Tensor::vector(trs.iter().map(|t| t.action as f64).collect());
        let y = Tensor::new(vec![idx.len(), 1], targets.to_vec())?;
        let prog = self.program(idx.len())?;
        Ok(prog.run(params, &[&x, &a, &y])?)
    }

    /// The gradient of one training step on `idx` at `params`.
    pub fn training_grad(&mut self, params: &ParamVector, idx: &[usize]) -> Result<GradResult> {
        let y = self.targets_for(params, idx)?;
        self.batch_grad(params, idx, &y)
    }

    /// Online parameters after one step on `idx`, using a copy of the
    /// optimizer state; the learner itself is untouched.
    pub fn trial_step(&mut self, idx: &[usize]) -> Result<ParamVector> {
        let params = self.model.params().clone();
        let g = self.training_grad(&params, idx)?;
        let mut opt = self.opt.clone();
        let mut p = params;
        opt.step(&mut p, &g.grad)?;
        Ok(p)
    }
}

impl Learner for BufferLearner {
    fn step(&mut self, rng: &mut Rng) -> Result<f64> {
        if let BufferObjective::TdLambda { refresh, .. } = self.objective {
            if self.steps > 0 && self.steps % refresh == 0 {
                self.refresh_lambda()?;
            }
        }
        let n = self.batch.min(self.buffer.len());
        let idx = self.buffer.sample_indices(n, rng)?;
        let params = self.model.params().clone();
        let g = self.training_grad(&params, &idx)?;
        self.opt.step(self.model.params_mut(), &g.grad)?;
        self.rule.after_step(self.model.params())?;
        self.steps += 1;
        Ok(g.value)
    }

    fn model(&self) -> &ValueModel {
        &self.model
    }
}

/// Batched one-step Q targets.
pub fn q_learning_targets(
    model: &ValueModel,
    online: &ParamVector,
    shadow: &ParamVector,
    trs: &[&Transition],
    gamma: f64,
    double: bool,
) -> Result<Vec<f64>> {
    let nexts: Vec<&Obs> = trs.iter().map(|t| &t.next_state).collect();
    let qs = q_values_batch(model, shadow, &nexts)?;
    let sel = if double {
        Some(q_values_batch(model, online, &nexts)?)
    } else {
        None
    };
    Ok(trs
        .iter()
        .enumerate()
        .map(|(r, t)| {
            if t.done {
                return t.reward;
            }
            let a = argmax(sel.as_ref().unwrap_or(&qs).row(r));
            t.reward + gamma * qs.row(r)[a]
        })
        .collect())
}

/// Pointwise TD loss `(f(s,a) − (r + γ·v_target(s′)))²` where `f` is the
/// action-selected output (or V) and `v_target` the scalarized output under
/// `target_params`.
pub fn pointwise_td_loss(
    model: &ValueModel,
    params: &ParamVector,
    target_params: &ParamVector,
    tr: &Transition,
    gamma: f64,
) -> Result<f64> {
    let out = model.forward_with(params, &model.single(&tr.state.x)?)?;
    let pred = if model.spec().outputs == 1 { out.item() } else { out.row(0)[tr.action] };
    let y = if tr.done {
        tr.reward
    } else {
        let v = model.scalar_outputs_with(target_params, &model.single(&tr.next_state.x)?)?;
        tr.reward + gamma * v[0]
    };
    Ok((pred - y).powi(2))
}
