//! Bootstrapped targets: one-step, λ-returns and TD errors.

use tdi_autodiff::{ParamVector, Tensor};

use crate::env::{mc_returns, Obs, ReplayBuffer, Transition};
use crate::error::{CoreError, Result};
use crate::models::ValueModel;

/// Anything that can value a state.
pub trait StateValue {
    fn values(&self, states: &[&Obs]) -> Result<Vec<f64>>;

    fn value(&self, s: &Obs) -> Result<f64> {
        Ok(self.values(&[s])?[0])
    }
}

/// A value table indexed by state id.
impl StateValue for [f64] {
    fn values(&self, states: &[&Obs]) -> Result<Vec<f64>> {
        states
            .iter()
            .map(|s| {
                self.get(s.id)
                    .copied()
                    .ok_or(CoreError::OutOfRange { index: s.id, len: self.len() })
            })
            .collect()
    }
}

impl StateValue for Vec<f64> {
    fn values(&self, states: &[&Obs]) -> Result<Vec<f64>> {
        self.as_slice().values(states)
    }
}

/// A model's scalarized output under a given parameter vector.
pub struct ModelValue<'a> {
    pub model: &'a ValueModel,
    pub params: &'a ParamVector,
}

const VALUE_CHUNK: usize = 256;

impl StateValue for ModelValue<'_> {
    fn values(&self, states: &[&Obs]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(states.len());
        for chunk in states.chunks(VALUE_CHUNK) {
            let xs: Vec<&Tensor> = chunk.iter().map(|s| s.x.as_ref()).collect();
            let batch = Tensor::stack(&xs)?;
            out.extend(self.model.scalar_outputs_with(self.params, &batch)?);
        }
        Ok(out)
    }
}

/// `r + γ·V(s′)`, with no bootstrap on terminal transitions.
pub fn td0_target(values: &(impl StateValue + ?Sized), tr: &Transition, gamma: f64) -> Result<f64> {
    if tr.done {
        return Ok(tr.reward);
    }
    Ok(tr.reward + gamma * values.value(&tr.next_state)?)
}

/// Weights over the n-step returns `G¹..G^N` for `N` remaining steps; the
/// last weight `λ^{N−1}` sits on the full return.
pub fn lambda_weights(remaining: usize, lambda: f64) -> Vec<f64> {
    (1..=remaining)
        .map(|n| {
            if n < remaining {
                (1.0 - lambda) * lambda.powi(n as i32 - 1)
            } else {
                lambda.powi(n as i32 - 1)
            }
        })
        .collect()
}

/// λ-returns for every step of one terminated trajectory.
pub fn lambda_returns(
    trajectory: &[Transition],
    values: &(impl StateValue + ?Sized),
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(CoreError::InvalidArgument(format!("λ = {lambda} outside [0, 1]")));
    }
    let full = mc_returns(trajectory, gamma)?;
    let nexts: Vec<&Obs> = trajectory.iter().map(|t| &t.next_state).collect();
    let v_next = values.values(&nexts)?;
    let len = trajectory.len();
    let mut out = Vec::with_capacity(len);
    for t in 0..len {
        let remaining = len - t;
        let w = lambda_weights(remaining, lambda);
        let mut acc = 0.0;
        let mut rewards = 0.0;
        let mut disc = 1.0;
        for n in 1..remaining {
            rewards += disc * trajectory[t + n - 1].reward;
            disc *= gamma;
            let g_n = if trajectory[t + n - 1].done {
                rewards
            } else {
                rewards + disc * v_next[t + n - 1]
            };
            acc += w[n - 1] * g_n;
        }
        acc += w[remaining - 1] * full[t];
        out.push(acc);
    }
    Ok(out)
}

/// λ-targets for a whole buffer, stamped with the bootstrap generation.
#[derive(Clone, Debug, PartialEq)]
pub struct LambdaTargetSet {
    pub lambda: f64,
    pub targets: Vec<f64>,
    pub generation: u64,
}

impl LambdaTargetSet {
    pub fn compute(
        buffer: &ReplayBuffer,
        values: &(impl StateValue + ?Sized),
        gamma: f64,
        lambda: f64,
        generation: u64,
    ) -> Result<Self> {
        let mut targets = Vec::with_capacity(buffer.len());
        for r in buffer.trajectories() {
            let traj = buffer.slice(r);
            targets.extend(lambda_returns(&traj, values, gamma, lambda)?);
        }
        Ok(LambdaTargetSet {
            lambda,
            targets,
            generation,
        })
    }
}

/// `δ = prediction − target`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TdErrorRecord {
    pub index: usize,
    pub state_id: usize,
    pub target: f64,
    pub prediction: f64,
    pub delta: f64,
}

impl TdErrorRecord {
    pub fn new(index: usize, state_id: usize, prediction: f64, target: f64) -> Self {
        TdErrorRecord {
            index,
            state_id,
            target,
            prediction,
            delta: prediction - target,
        }
    }
}

/// One-step TD errors `V(s) − (r + γV_target(s′))` across a buffer.
pub fn td_errors(
    buffer: &ReplayBuffer,
    online: &(impl StateValue + ?Sized),
    target: &(impl StateValue + ?Sized),
    gamma: f64,
) -> Result<Vec<TdErrorRecord>> {
    let states: Vec<&Obs> = buffer.iter().map(|t| &t.state).collect();
    let nexts: Vec<&Obs> = buffer.iter().map(|t| &t.next_state).collect();
    let v = online.values(&states)?;
    let vn = target.values(&nexts)?;
    Ok(buffer
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let y = if t.done { t.reward } else { t.reward + gamma * vn[i] };
            TdErrorRecord::new(i, t.state.id, v[i], y)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tr(id: usize, next: usize, reward: f64, done: bool, step: usize) -> Transition {
        Transition {
            state: Obs::new(id, Tensor::vector(vec![id as f64])),
            action: 0,
            reward,
            next_state: Obs::new(next, Tensor::vector(vec![next as f64])),
            done,
            trajectory: 0,
            step,
        }
    }

    #[test]
    fn td0_examples() {
        let v = vec![1.0, 1.0];
        let t = tr(0, 1, 0.5, false, 0);
        let y = td0_target(&v, &t, 0.9).unwrap();
        assert!((y - 1.4).abs() < 1e-15);
        assert!((1.0 - y + 0.4).abs() < 1e-15);
        assert_eq!(td0_target(&v, &tr(0, 1, 0.5, true, 0), 0.9).unwrap(), 0.5);
        assert_eq!(td0_target(&v, &t, 0.0).unwrap(), 0.5);
    }

    #[test]
    fn lambda_return_examples() {
        // s0 -(1)-> s1 -(0)-> terminal; V(s1) = 2
        let traj = vec![tr(0, 1, 1.0, false, 0), tr(1, 2, 0.0, true, 1)];
        let v = vec![0.0, 2.0, 0.0];
        let at = |l: f64| lambda_returns(&traj, &v, 0.5, l).unwrap()[0];
        assert_eq!(at(0.0), 2.0);
        assert_eq!(at(1.0), 1.0);
        assert_eq!(at(0.5), 1.5);
    }

    #[test]
    fn weights_sum_to_one() {
        for n in 1..40 {
            for l in [0.0, 0.3, 0.9, 1.0] {
                let s: f64 = lambda_weights(n, l).iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_unterminated() {
        let traj = vec![tr(0, 1, 1.0, false, 0)];
        assert!(matches!(
            lambda_returns(&traj, &vec![0.0, 0.0], 0.9, 0.5),
            Err(CoreError::Unterminated(0))
        ));
    }
}
