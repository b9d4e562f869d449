//! Pointwise Q-learning, double-Q and distillation losses.

use tdi_autodiff::{ParamVector, Tensor};

use crate::env::{argmax, Obs, Transition};
use crate::error::{CoreError, Result};
use crate::models::ValueModel;

/// Action values of a state under given parameters.
pub fn q_values(model: &ValueModel, params: &ParamVector, s: &Obs) -> Result<Vec<f64>> {
    let out = model.forward_with(params, &model.single(&s.x)?)?;
    Ok(out.row(0).to_vec())
}

/// Batched `[n, n_o]` action values.
pub fn q_values_batch(model: &ValueModel, params: &ParamVector, states: &[&Obs]) -> Result<Tensor> {
    let xs: Vec<&Tensor> = states.iter().map(|s| s.x.as_ref()).collect();
    model.forward_with(params, &Tensor::stack(&xs)?)
}

/// `r + γ max_a Q_shadow(s′, a)`, or with `double` the online argmax
/// evaluated by the shadow.
pub fn q_target(
    model: &ValueModel,
    online: &ParamVector,
    shadow: &ParamVector,
    tr: &Transition,
    gamma: f64,
    double: bool,
) -> Result<f64> {
    if tr.done {
        return Ok(tr.reward);
    }
    let qs = q_values(model, shadow, &tr.next_state)?;
    let a = if double {
        argmax(&q_values(model, online, &tr.next_state)?)
    } else {
        argmax(&qs)
    };
    Ok(tr.reward + gamma * qs[a])
}

fn check_action(model: &ValueModel, a: usize) -> Result<()> {
    if a >= model.spec().outputs {
        return Err(CoreError::InvalidArgument(format!("action {a} out of range")));
    }
    Ok(())
}

/// `(Q_θ(s,a) − (r + γ max_a′ Q_shadow(s′,a′)))²`.
pub fn ql_loss(model: &ValueModel, online: &ParamVector, shadow: &ParamVector, tr: &Transition, gamma: f64) -> Result<f64> {
    check_action(model, tr.action)?;
    let q = q_values(model, online, &tr.state)?[tr.action];
    let y = q_target(model, online, shadow, tr, gamma, false)?;
    Ok((q - y).powi(2))
}

/// Double-Q: `(Q_θ(s,a) − (r + γ Q_shadow(s′, argmax_a′ Q_θ(s′,a′))))²`.
pub fn ddqn_loss(model: &ValueModel, online: &ParamVector, shadow: &ParamVector, tr: &Transition, gamma: f64) -> Result<f64> {
    check_action(model, tr.action)?;
    let q = q_values(model, online, &tr.state)?[tr.action];
    let y = q_target(model, online, shadow, tr, gamma, true)?;
    Ok((q - y).powi(2))
}

/// Reference action values for distillation.
pub trait Expert {
    fn q_values(&self, s: &Obs) -> Result<Vec<f64>>;
}

/// `Q*` table indexed by state id.
pub struct TabularExpert(pub Vec<Vec<f64>>);

impl Expert for TabularExpert {
    fn q_values(&self, s: &Obs) -> Result<Vec<f64>> {
        self.0.get(s.id).cloned().ok_or(CoreError::MissingExpert(s.id))
    }
}

/// A trained reference network.
pub struct ModelExpert {
    pub model: ValueModel,
}

impl Expert for ModelExpert {
    fn q_values(&self, s: &Obs) -> Result<Vec<f64>> {
        q_values(&self.model, self.model.params(), s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillLosses {
    pub mc: f64,
    pub reg: f64,
    pub td_star: f64,
}

/// Regression targets for the three distillation objectives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistillTargets {
    pub mc: f64,
    pub reg: f64,
    pub td_star: f64,
}

pub fn distill_targets(tr: &Transition, expert: &dyn Expert, mc_return: f64, gamma: f64) -> Result<DistillTargets> {
    let qs = expert.q_values(&tr.state)?;
    let reg = *qs.get(tr.action).ok_or(CoreError::MissingExpert(tr.state.id))?;
    let td_star = if tr.done {
        tr.reward
    } else {
        let qn = expert.q_values(&tr.next_state)?;
        if qn.is_empty() {
            return Err(CoreError::MissingExpert(tr.next_state.id));
        }
        tr.reward + gamma * qn[argmax(&qn)]
    };
    Ok(DistillTargets {
        mc: mc_return,
        reg,
        td_star,
    })
}

/// `L_MC = (Q − G)²`, `L_reg = (Q − Q*)²`, `L_TD* = (Q − (r + γ max Q*(s′)))²`.
pub fn distill_losses(
    model: &ValueModel,
    params: &ParamVector,
    tr: &Transition,
    expert: &dyn Expert,
    mc_return: f64,
    gamma: f64,
) -> Result<DistillLosses> {
    check_action(model, tr.action)?;
    let t = distill_targets(tr, expert, mc_return, gamma)?;
    let q = q_values(model, params, &tr.state)?[tr.action];
    Ok(DistillLosses {
        mc: (q - t.mc).powi(2),
        reg: (q - t.reg).powi(2),
        td_star: (q - t.td_star).powi(2),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Head, ModelSpec};

    /// Outputs equal the bias vector, independent of the input.
    fn constant_q(outs: &[f64]) -> (ValueModel, ParamVector) {
        let m = ValueModel::init(&ModelSpec::mlp(1, 1, 0, outs.len(), Head::Value), 0).unwrap();
        let mut p = ParamVector::zeros(m.layout().clone());
        let b = m.layout().find("out.b").unwrap();
        p.segment_mut(b).copy_from_slice(outs);
        (m, p)
    }

    fn tr(action: usize, reward: f64, done: bool) -> Transition {
        Transition {
            state: Obs::new(0, Tensor::vector(vec![0.0])),
            action,
            reward,
            next_state: Obs::new(1, Tensor::vector(vec![1.0])),
            done,
            trajectory: 0,
            step: 0,
        }
    }

    #[test]
    fn ql_examples() {
        let (m, p) = constant_q(&[1.0]);
        assert!((ql_loss(&m, &p, &p, &tr(0, 0.0, false), 0.9).unwrap() - 0.01).abs() < 1e-15);
        let (m, p) = constant_q(&[0.5]);
        assert_eq!(ql_loss(&m, &p, &p, &tr(0, 0.5, true), 0.9).unwrap(), 0.0);
    }

    #[test]
    fn ddqn_decouples_selection_from_evaluation() {
        let (m, online) = constant_q(&[3.0, 1.0]);
        let (_, shadow) = constant_q(&[0.2, 5.0]);
        let t = tr(0, 0.0, false);
        assert!((q_target(&m, &online, &shadow, &t, 1.0, true).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(q_target(&m, &online, &shadow, &t, 1.0, false).unwrap(), 5.0);
        let same = ql_loss(&m, &online, &online, &t, 0.9).unwrap();
        assert_eq!(same, ddqn_loss(&m, &online, &online, &t, 0.9).unwrap());
    }

    #[test]
    fn distill_examples() {
        let (m, p) = constant_q(&[0.0, 0.0]);
        let expert = TabularExpert(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let l = distill_losses(&m, &p, &tr(1, 0.0, false), &expert, 1.0, 0.9).unwrap();
        assert_eq!(l.mc, 1.0);
        assert_eq!(l.reg, 0.0);
        let missing = TabularExpert(vec![vec![0.0, 0.0]]);
        assert!(matches!(
            distill_losses(&m, &p, &tr(1, 0.0, false), &missing, 1.0, 0.9),
            Err(CoreError::MissingExpert(1))
        ));
    }
}
