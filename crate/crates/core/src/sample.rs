//! Single-example loss graphs shared by training diagnostics and the
//! interference measurements.

use std::sync::Arc;

use tdi_autodiff::{grad, Graph, GradResult, NodeId, ParamVector, Tensor};

use crate::error::{CoreError, Result};
use crate::models::ValueModel;

/// What a per-example loss compares the prediction against.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossTarget {
    /// `½(f − y)²`; its derivative in `f` is exactly `δ = f − y`.
    HalfSquared(f64),
    /// `(f − y)²`, the training-loss convention.
    Squared(f64),
    /// `−log softmax(logits)[label]`.
    CrossEntropy(usize),
}

/// One example with an optional action selecting the predicted output.
#[derive(Clone, Debug, PartialEq)]
pub struct LossSample {
    pub x: Arc<Tensor>,
    pub action: Option<usize>,
    pub target: LossTarget,
}

impl LossSample {
    pub fn half_squared(x: Arc<Tensor>, action: Option<usize>, y: f64) -> Self {
        LossSample {
            x,
            action,
            target: LossTarget::HalfSquared(y),
        }
    }

    pub fn with_target(&self, target: LossTarget) -> Self {
        LossSample {
            x: self.x.clone(),
            action: self.action,
            target,
        }
    }
}

/// Rank-0 prediction the loss acts on: the output column `action`, the lone
/// output of a single-output model, or the scalarized output otherwise.
pub fn prediction_node(model: &ValueModel, g: &mut Graph, out: NodeId, action: Option<usize>) -> Result<NodeId> {
    let n_o = model.spec().outputs;
    match action {
        Some(a) if a >= n_o => Err(CoreError::InvalidArgument(format!("action {a} ≥ {n_o} outputs"))),
        Some(a) => {
            let idx = g.constant(Tensor::vector(vec![a as f64]));
            let picked = g.gather(out, idx)?;
            Ok(g.reshape(picked, &[])?)
        }
        None => model.scalarize(g, out),
    }
}

/// Graph and output node of the prediction `f(x)` for one example.
pub fn prediction_graph(model: &ValueModel, action: Option<usize>) -> Result<(Graph, NodeId)> {
    let mut fg = model.forward_graph(1)?;
    let f = prediction_node(model, &mut fg.graph, fg.output, action)?;
    Ok((fg.graph, f))
}

/// Loss node for one example whose batched input `[1, …]` is `x`; lets
/// several examples share one graph.
pub fn loss_node(model: &ValueModel, g: &mut Graph, x: NodeId, sample: &LossSample) -> Result<NodeId> {
    let out = model.build(g, x)?;
    match sample.target {
        LossTarget::HalfSquared(y) | LossTarget::Squared(y) => {
            let f = prediction_node(model, g, out, sample.action)?;
            let d = g.add_scalar(f, -y)?;
            let d2 = g.mul(d, d)?;
            if matches!(sample.target, LossTarget::HalfSquared(_)) {
                Ok(g.scale(d2, 0.5)?)
            } else {
                Ok(d2)
            }
        }
        LossTarget::CrossEntropy(label) => {
            if label >= model.spec().outputs {
                return Err(CoreError::InvalidArgument(format!("label {label} out of range")));
            }
            let l = g.constant(Tensor::vector(vec![label as f64]));
            Ok(g.cross_entropy(out, l)?)
        }
    }
}

/// Graph of the per-example loss; its only input is the batched example.
pub fn loss_graph(model: &ValueModel, sample: &LossSample) -> Result<(Graph, NodeId)> {
    let mut g = model.empty_graph();
    let x = g.input(&batched_shape(model));
    let j = loss_node(model, &mut g, x, sample)?;
    Ok((g, j))
}

/// `[1, …input_shape]`.
pub fn batched_shape(model: &ValueModel) -> Vec<usize> {
    let mut s = vec![1];
    s.extend(&model.spec().input_shape);
    s
}

/// `∇_θ J(sample)` under `params`.
pub fn loss_grad(model: &ValueModel, params: &ParamVector, sample: &LossSample) -> Result<GradResult> {
    let (g, j) = loss_graph(model, sample)?;
    let x = model.single(&sample.x)?;
    Ok(grad(&g, j, params, &[&x])?)
}

/// `f(x)` and `∇_θ f(x)` for the action-selected prediction.
pub fn prediction_grad(model: &ValueModel, params: &ParamVector, x: &Tensor, action: Option<usize>) -> Result<GradResult> {
    let (g, f) = prediction_graph(model, action)?;
    let xb = model.single(x)?;
    Ok(grad(&g, f, params, &[&xb])?)
}

/// Scalarized output (argmax rule) and its gradient.
pub fn function_grad(model: &ValueModel, params: &ParamVector, x: &Tensor) -> Result<GradResult> {
    prediction_grad(model, params, x, None)
}

/// Loss value under `params`.
pub fn loss_value(model: &ValueModel, params: &ParamVector, sample: &LossSample) -> Result<f64> {
    let (g, j) = loss_graph(model, sample)?;
    let x = model.single(&sample.x)?;
    Ok(g.evaluate(params, &[&x], &[j])?[0].item())
}

/// `δ = f − y` for squared targets; `None` for cross-entropy.
pub fn delta(model: &ValueModel, params: &ParamVector, sample: &LossSample) -> Result<Option<f64>> {
    match sample.target {
        LossTarget::HalfSquared(y) | LossTarget::Squared(y) => {
            let (g, f) = prediction_graph(model, sample.action)?;
            let x = model.single(&sample.x)?;
            Ok(Some(g.evaluate(params, &[&x], &[f])?[0].item() - y))
        }
        LossTarget::CrossEntropy(_) => Ok(None),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Head, ModelSpec};

    #[test]
    fn half_squared_gradient_is_delta_times_prediction_gradient() {
        let m = ValueModel::init(&ModelSpec::mlp(3, 5, 1, 2, Head::Value), 9).unwrap();
        let x = Arc::new(Tensor::vector(vec![0.2, -0.4, 0.9]));
        let s = LossSample::half_squared(x.clone(), Some(1), 0.3);
        let gj = loss_grad(&m, m.params(), &s).unwrap();
        let gf = prediction_grad(&m, m.params(), &x, Some(1)).unwrap();
        let d = delta(&m, m.params(), &s).unwrap().unwrap();
        assert!((gj.value - 0.5 * d * d).abs() < 1e-15);
        let expect = gf.grad.scaled(d);
        assert!(gj.grad.max_abs_diff(&expect).unwrap() < 1e-14);
        let sq = loss_value(&m, m.params(), &s.with_target(LossTarget::Squared(0.3))).unwrap();
        assert!((sq - d * d).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_selectors_rejected() {
        let m = ValueModel::init(&ModelSpec::mlp(1, 2, 0, 2, Head::Classifier), 0).unwrap();
        let x = Arc::new(Tensor::vector(vec![1.0]));
        assert!(loss_grad(&m, m.params(), &LossSample::half_squared(x.clone(), Some(2), 0.0)).is_err());
        let ce = LossSample {
            x,
            action: None,
            target: LossTarget::CrossEntropy(2),
        };
        assert!(loss_grad(&m, m.params(), &ce).is_err());
    }
}
