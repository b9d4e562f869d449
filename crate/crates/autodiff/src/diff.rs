//! Gradient, per-example gradient and Hessian-vector product entry points.

use std::sync::Arc;

use crate::error::{AdError, Result};
use crate::graph::{Graph, NodeId};
use crate::param::{Layout, ParamVector};
use crate::tensor::{numel, Tensor};

/// A scalar value and its gradient w.r.t. all parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradResult {
    pub value: f64,
    pub grad: ParamVector,
}

fn check_scalar(graph: &Graph, output: NodeId) -> Result<()> {
    if output.index() >= graph.len() {
        return Err(AdError::UnknownNode(output.index()));
    }
    let shape = graph.shape(output);
    if numel(shape) != 1 {
        return Err(AdError::NonScalarOutput {
            node: output.index(),
            shape: shape.to_vec(),
        });
    }
    Ok(())
}

fn assemble(layout: &Arc<Layout>, grads: &[Option<NodeId>], values: &[Option<Tensor>]) -> ParamVector {
    let mut out = ParamVector::zeros(layout.clone());
    for (seg, g) in grads.iter().enumerate() {
        if let Some(id) = g {
            let v = values[id.index()].as_ref().expect("gradient node evaluated");
            out.segment_mut(seg).copy_from_slice(v.data());
        }
    }
    out
}

/// A graph extended once with its parameter-gradient nodes; reusable across
/// parameter values and inputs.
#[derive(Clone, Debug)]
pub struct GradProgram {
    graph: Graph,
    output: NodeId,
    grads: Vec<Option<NodeId>>,
}

impl GradProgram {
    pub fn new(graph: &Graph, output: NodeId) -> Result<Self> {
        check_scalar(graph, output)?;
        let mut graph = graph.clone();
        let grads = graph.param_gradients(output)?;
        Ok(GradProgram { graph, output, grads })
    }

    /// The extended graph (forward plus adjoint nodes).
    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn run(&self, params: &ParamVector, inputs: &[&Tensor]) -> Result<GradResult> {
        let mut wanted = vec![self.output];
        wanted.extend(self.grads.iter().flatten());
        let values = self.graph.eval_values(params, inputs, &wanted)?;
        Ok(GradResult {
            value: values[self.output.index()].as_ref().expect("output").item(),
            grad: assemble(self.graph.layout(), &self.grads, &values),
        })
    }
}

/// Value and parameter gradient of a scalar graph output.
pub fn grad(graph: &Graph, output: NodeId, params: &ParamVector, inputs: &[&Tensor]) -> Result<GradResult> {
    GradProgram::new(graph, output)?.run(params, inputs)
}

/// One gradient per example; `graph` takes a single example's inputs.
pub fn per_example_grads(
    graph: &Graph,
    output: NodeId,
    params: &ParamVector,
    batch: &[Vec<Tensor>],
) -> Result<Vec<GradResult>> {
    if batch.is_empty() {
        return Err(AdError::EmptyBatch);
    }
    let prog = GradProgram::new(graph, output)?;
    batch
        .iter()
        .map(|ex| {
            let refs: Vec<&Tensor> = ex.iter().collect();
            prog.run(params, &refs)
        })
        .collect()
}

/// Reverse-over-reverse Hessian-vector product: differentiates `∇J · v`.
/// The vector `v` is fed through extra input slots appended after the
/// graph's own inputs.
#[derive(Clone, Debug)]
pub struct HvpProgram {
    graph: Graph,
    output: NodeId,
    grads: Vec<Option<NodeId>>,
    hv: Vec<Option<NodeId>>,
}

impl HvpProgram {
    pub fn new(graph: &Graph, output: NodeId) -> Result<Self> {
        check_scalar(graph, output)?;
        let mut g = graph.clone();
        let grads = g.param_gradients(output)?;
        let layout = g.layout().clone();
        let mut acc: Option<NodeId> = None;
        for (seg, gi) in grads.iter().enumerate() {
            let v = g.input(&layout.segment(seg).shape);
            if let Some(gi) = gi {
                let prod = g.mul(*gi, v)?;
                let s = g.sum(prod)?;
                acc = Some(match acc {
                    None => s,
                    Some(a) => g.add(a, s)?,
                });
            }
        }
        let hv = match acc {
            Some(s) => g.param_gradients(s)?,
            None => vec![None; layout.segments().len()],
        };
        Ok(HvpProgram {
            graph: g,
            output,
            grads,
            hv,
        })
    }

    /// Returns (J, ∇J, H·v).
    pub fn run_full(
        &self,
        params: &ParamVector,
        inputs: &[&Tensor],
        v: &ParamVector,
    ) -> Result<(f64, ParamVector, ParamVector)> {
        if !v.same_layout(params) {
            return Err(AdError::LayoutMismatch);
        }
        let segs: Vec<Tensor> = (0..v.layout().segments().len()).map(|i| v.segment_tensor(i)).collect();
        let mut all: Vec<&Tensor> = inputs.to_vec();
        all.extend(segs.iter());
        let mut wanted = vec![self.output];
        wanted.extend(self.grads.iter().flatten());
        wanted.extend(self.hv.iter().flatten());
        let values = self.graph.eval_values(params, &all, &wanted)?;
        let layout = self.graph.layout();
        Ok((
            values[self.output.index()].as_ref().expect("output").item(),
            assemble(layout, &self.grads, &values),
            assemble(layout, &self.hv, &values),
        ))
    }

    pub fn run(&self, params: &ParamVector, inputs: &[&Tensor], v: &ParamVector) -> Result<ParamVector> {
        Ok(self.run_full(params, inputs, v)?.2)
    }
}

/// H·v where H is the parameter Hessian of the scalar `output`.
pub fn hvp(
    graph: &Graph,
    output: NodeId,
    params: &ParamVector,
    inputs: &[&Tensor],
    v: &ParamVector,
) -> Result<ParamVector> {
    HvpProgram::new(graph, output)?.run(params, inputs, v)
}

/// H̄·v for the Hessian of a scalarized model output `f` rather than of a
/// loss. Same machinery as [`hvp`]; kept separate so call sites say which
/// curvature they mean.
pub fn function_hvp(
    graph: &Graph,
    model_output: NodeId,
    params: &ParamVector,
    inputs: &[&Tensor],
    v: &ParamVector,
) -> Result<ParamVector> {
    hvp(graph, model_output, params, inputs, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::Layout;

    fn one_param_graph() -> (Graph, NodeId) {
        let mut l = Layout::new();
        l.push("theta", vec![1, 1]);
        let mut g = Graph::new(Arc::new(l));
        let x = g.input(&[1, 1]);
        let y = g.input(&[1, 1]);
        let f = g.matmul(x, g.param(0)).unwrap();
        let se = g.squared_error(f, y).unwrap();
        let j = g.scale(se, 0.5).unwrap();
        (g, j)
    }

    #[test]
    fn hand_chain_rule() {
        let (g, j) = one_param_graph();
        let p = ParamVector::from_data(g.layout().clone(), vec![1.0]).unwrap();
        let x = Tensor::matrix(&[vec![2.0]]);
        let y = Tensor::matrix(&[vec![0.0]]);
        let r = grad(&g, j, &p, &[&x, &y]).unwrap();
        assert_eq!(r.value, 2.0);
        assert_eq!(r.grad.data(), &[4.0]);
    }

    #[test]
    fn non_scalar_output_rejected() {
        let mut l = Layout::new();
        l.push("w", vec![2, 2]);
        let mut g = Graph::new(Arc::new(l));
        let x = g.input(&[1, 2]);
        let f = g.matmul(x, g.param(0)).unwrap();
        let p = ParamVector::zeros(g.layout().clone());
        let xt = Tensor::matrix(&[vec![1.0, 1.0]]);
        assert!(matches!(grad(&g, f, &p, &[&xt]), Err(AdError::NonScalarOutput { .. })));
    }

    #[test]
    fn constant_graph_has_zero_gradient() {
        let mut l = Layout::new();
        l.push("w", vec![3]);
        let mut g = Graph::new(Arc::new(l));
        let c = g.scalar(7.0);
        let p = ParamVector::from_data(g.layout().clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let r = grad(&g, c, &p, &[]).unwrap();
        assert_eq!(r.value, 7.0);
        assert!(r.grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_example_batch_of_one_matches_grad() {
        let (g, j) = one_param_graph();
        let p = ParamVector::from_data(g.layout().clone(), vec![0.3]).unwrap();
        let ex = vec![Tensor::matrix(&[vec![1.5]]), Tensor::matrix(&[vec![-1.0]])];
        let refs: Vec<&Tensor> = ex.iter().collect();
        let single = grad(&g, j, &p, &refs).unwrap();
        let per = per_example_grads(&g, j, &p, &[ex]).unwrap();
        assert_eq!(per, vec![single]);
        assert!(matches!(per_example_grads(&g, j, &p, &[]), Err(AdError::EmptyBatch)));
    }

    #[test]
    fn quadratic_hvp() {
        // J = ½ θᵀ D θ, D = diag(1, 2)
        let mut l = Layout::new();
        l.push("theta", vec![2]);
        let mut g = Graph::new(Arc::new(l));
        let d = g.constant(Tensor::vector(vec![1.0, 2.0]));
        let th = g.param(0);
        let t2 = g.mul(th, th).unwrap();
        let dt = g.mul(d, t2).unwrap();
        let s = g.sum(dt).unwrap();
        let j = g.scale(s, 0.5).unwrap();
        let p = ParamVector::from_data(g.layout().clone(), vec![0.7, -1.3]).unwrap();
        let v = ParamVector::from_data(g.layout().clone(), vec![1.0, 1.0]).unwrap();
        let hv = hvp(&g, j, &p, &[], &v).unwrap();
        assert_eq!(hv.data(), &[1.0, 2.0]);
    }

    #[test]
    fn linear_scalar_has_zero_hvp() {
        let mut l = Layout::new();
        l.push("theta", vec![3]);
        let mut g = Graph::new(Arc::new(l));
        let x = g.input(&[3]);
        let m = g.mul(g.param(0), x).unwrap();
        let f = g.sum(m).unwrap();
        let p = ParamVector::from_data(g.layout().clone(), vec![1.0, 2.0, 3.0]).unwrap();
        let v = ParamVector::from_data(g.layout().clone(), vec![0.5, -1.0, 2.0]).unwrap();
        let xt = Tensor::vector(vec![4.0, 5.0, 6.0]);
        let hv = function_hvp(&g, f, &p, &[&xt], &v).unwrap();
        assert!(hv.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_function_hvp() {
        // f = θ₁θ₂, Hessian [[0,1],[1,0]], v = (1,0) → (0,1)
        let mut l = Layout::new();
        l.push("a", vec![]);
        l.push("b", vec![]);
        let mut g = Graph::new(Arc::new(l));
        let f = g.mul(g.param(0), g.param(1)).unwrap();
        let p = ParamVector::from_data(g.layout().clone(), vec![0.4, -2.0]).unwrap();
        let v = ParamVector::from_data(g.layout().clone(), vec![1.0, 0.0]).unwrap();
        let hv = function_hvp(&g, f, &p, &[], &v).unwrap();
        assert_eq!(hv.data(), &[0.0, 1.0]);
    }

    #[test]
    fn hvp_layout_mismatch_rejected() {
        let (g, j) = one_param_graph();
        let p = ParamVector::from_data(g.layout().clone(), vec![1.0]).unwrap();
        let mut other = Layout::new();
        other.push("z", vec![2]);
        let v = ParamVector::zeros(Arc::new(other));
        let x = Tensor::matrix(&[vec![2.0]]);
        let y = Tensor::matrix(&[vec![0.0]]);
        assert!(matches!(hvp(&g, j, &p, &[&x, &y], &v), Err(AdError::LayoutMismatch)));
    }
}
