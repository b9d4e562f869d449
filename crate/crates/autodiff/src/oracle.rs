//! Central finite-difference oracles used to check the symbolic derivatives.

use crate::diff::GradProgram;
use crate::error::{AdError, Result};
use crate::graph::{Graph, NodeId};
use crate::param::ParamVector;
use crate::tensor::Tensor;

fn scalar_at(graph: &Graph, output: NodeId, params: &ParamVector, inputs: &[&Tensor]) -> Result<f64> {
    Ok(graph.evaluate(params, inputs, &[output])?[0].item())
}

/// Per-coordinate central differences `(J(θ+h eᵢ) − J(θ−h eᵢ)) / 2h`.
pub fn finite_diff_grad(
    graph: &Graph,
    output: NodeId,
    params: &ParamVector,
    inputs: &[&Tensor],
    h: f64,
) -> Result<ParamVector> {
    if h.is_nan() || h <= 0.0 {
        return Err(AdError::InvalidStep(h));
    }
    let mut out = ParamVector::zeros(params.layout().clone());
    let mut probe = params.clone();
    for i in 0..params.len() {
        let x = params.data()[i];
        probe.data_mut()[i] = x + h;
        let up = scalar_at(graph, output, &probe, inputs)?;
        probe.data_mut()[i] = x - h;
        let down = scalar_at(graph, output, &probe, inputs)?;
        probe.data_mut()[i] = x;
        out.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(out)
}

/// `(∇J(θ+hv) − ∇J(θ−hv)) / 2h`.
pub fn finite_diff_hvp(
    graph: &Graph,
    output: NodeId,
    params: &ParamVector,
    inputs: &[&Tensor],
    v: &ParamVector,
    h: f64,
) -> Result<ParamVector> {
    if h.is_nan() || h <= 0.0 {
        return Err(AdError::InvalidStep(h));
    }
    let prog = GradProgram::new(graph, output)?;
    let up = prog.run(&params.plus(h, v)?, inputs)?.grad;
    let down = prog.run(&params.plus(-h, v)?, inputs)?.grad;
    let mut diff = up.plus(-1.0, &down)?;
    diff = diff.scaled(1.0 / (2.0 * h));
    Ok(diff)
}
