//! Monte-Carlo policy gradient without a baseline.

use tdi_autodiff::{grad, Graph, GradResult, NodeId, ParamVector, Tensor};

use super::optim::Optimizer;
use crate::env::Obs;
use crate::error::{CoreError, Result};
use crate::models::ValueModel;

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeStep {
    pub state: Obs,
    pub action: usize,
    pub reward: f64,
}

/// Discounted returns `G(S_t)` for every step.
pub fn episode_returns(episode: &[EpisodeStep], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; episode.len()];
    let mut g = 0.0;
    for (i, s) in episode.iter().enumerate().rev() {
        g = s.reward + gamma * g;
        out[i] = g;
    }
    out
}

/// `−Σ_t G_t log π(A_t|S_t)` as a graph over the whole episode.
fn surrogate_graph(model: &ValueModel, episode: &[EpisodeStep], gamma: f64) -> Result<(Graph, NodeId, Tensor)> {
    if episode.is_empty() {
        return Err(CoreError::InvalidArgument("episode has no steps".into()));
    }
    let n_o = model.spec().outputs;
    if let Some(s) = episode.iter().find(|s| s.action >= n_o) {
        return Err(CoreError::InvalidArgument(format!("action {} out of range", s.action)));
    }
    let mut fg = model.forward_graph(episode.len())?;
    let g = &mut fg.graph;
    let ls = g.log_softmax(fg.output)?;
    let acts = g.constant(Tensor::vector(episode.iter().map(|s| s.action as f64).collect()));
    let picked = g.gather(ls, acts)?;
    let returns = episode_returns(episode, gamma);
    let gt = g.constant(Tensor::new(vec![episode.len(), 1], returns)?);
    let weighted = g.mul(picked, gt)?;
    let s = g.sum(weighted)?;
    let loss = g.neg(s)?;
    let xs: Vec<&Tensor> = episode.iter().map(|s| s.state.x.as_ref()).collect();
    Ok((fg.graph, loss, Tensor::stack(&xs)?))
}

/// Value and gradient of `−Σ_t G_t log π(A_t|S_t)`.
pub fn reinforce_gradient(
    model: &ValueModel,
    params: &ParamVector,
    episode: &[EpisodeStep],
    gamma: f64,
) -> Result<GradResult> {
    let (g, loss, batch) = surrogate_graph(model, episode, gamma)?;
    Ok(grad(&g, loss, params, &[&batch])?)
}

/// Surrogate value only.
pub fn reinforce_surrogate(model: &ValueModel, params: &ParamVector, episode: &[EpisodeStep], gamma: f64) -> Result<f64> {
    let (g, loss, batch) = surrogate_graph(model, episode, gamma)?;
    Ok(g.evaluate(params, &[&batch], &[loss])?[0].item())
}

/// One ascent step along `Σ_t G_t ∇log π(A_t|S_t)`.
pub fn reinforce_step(
    model: &ValueModel,
    episode: &[EpisodeStep],
    gamma: f64,
    optimizer: &mut Optimizer,
) -> Result<ValueModel> {
    let g = reinforce_gradient(model, model.params(), episode, gamma)?;
    let mut p = model.params().clone();
    optimizer.step(&mut p, &g.grad)?;
    model.with_params(p)
}
