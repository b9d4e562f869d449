//! Symbolic reverse mode. Every adjoint is emitted as ordinary graph nodes
//! from the same op set, so the result can be differentiated again.

use crate::error::{AdError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::tensor::{numel, Tensor};

/// Inputs through which gradient flows (selector keys and slope masks carry none).
fn differentiable_inputs(op: &Op) -> Vec<NodeId> {
    match op {
        Op::Pick(a, _) | Op::Scatter(a, _, _) => vec![*a],
        Op::LeakySlope(..) => vec![],
        other => other.inputs(),
    }
}

impl Graph {
    /// Append nodes computing d`output`/d`wrt[i]` for each `i`. Entries are
    /// `None` when the output does not depend on that node.
    pub fn gradients(&mut self, output: NodeId, wrt: &[NodeId]) -> Result<Vec<Option<NodeId>>> {
        if output.index() >= self.len() {
            return Err(AdError::UnknownNode(output.index()));
        }
        let out_shape = self.shape(output).to_vec();
        if numel(&out_shape) != 1 {
            return Err(AdError::NonScalarOutput {
                node: output.index(),
                shape: out_shape,
            });
        }
        let n0 = output.index() + 1;

        let mut depends = vec![false; n0];
        for w in wrt {
            if w.index() < n0 {
                depends[w.index()] = true;
            }
        }
        for i in 0..n0 {
            if !depends[i] && differentiable_inputs(&self.nodes()[i].op).iter().any(|j| depends[j.index()]) {
                depends[i] = true;
            }
        }
        let reach = self.ancestors(&[output]);

        let mut adj: Vec<Option<NodeId>> = vec![None; n0];
        if depends[output.index()] {
            adj[output.index()] = Some(self.constant(Tensor::full(&out_shape, 1.0)));
        }

        for i in (0..n0).rev() {
            if !(reach[i] && depends[i]) {
                continue;
            }
            let Some(g) = adj[i] else { continue };
            let op = self.nodes()[i].op.clone();
            let me = NodeId(i);
            let mut contribs: Vec<(NodeId, NodeId)> = Vec::new();
            let live = |id: &NodeId| depends[id.index()];
            match op {
                Op::Param(_) | Op::Input(_) | Op::Const(_) | Op::LeakySlope(..) => {}
                Op::Add(a, b) => {
                    if live(&a) {
                        contribs.push((a, g));
                    }
                    if live(&b) {
                        contribs.push((b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if live(&a) {
                        contribs.push((a, g));
                    }
                    if live(&b) {
                        contribs.push((b, self.neg(g)?));
                    }
                }
                Op::Mul(a, b) => {
                    if live(&a) {
                        contribs.push((a, self.mul(g, b)?));
                    }
                    if live(&b) {
                        contribs.push((b, self.mul(g, a)?));
                    }
                }
                Op::Div(a, b) => {
                    if live(&a) {
                        contribs.push((a, self.div(g, b)?));
                    }
                    if live(&b) {
                        let gq = self.mul(g, me)?;
                        let t = self.div(gq, b)?;
                        contribs.push((b, self.neg(t)?));
                    }
                }
                Op::Neg(a) => contribs.push((a, self.neg(g)?)),
                Op::Scale(a, c) => contribs.push((a, self.scale(g, c)?)),
                Op::AddScalar(a, _) => contribs.push((a, g)),
                Op::MatMul(a, b) => {
                    if live(&a) {
                        let bt = self.transpose(b)?;
                        contribs.push((a, self.matmul(g, bt)?));
                    }
                    if live(&b) {
                        let at = self.transpose(a)?;
                        contribs.push((b, self.matmul(at, g)?));
                    }
                }
                Op::Transpose(a) => contribs.push((a, self.transpose(g)?)),
                Op::LeakyRelu(a, s) => {
                    let mask = self.leaky_slope(a, s)?;
                    contribs.push((a, self.mul(g, mask)?));
                }
                Op::Tanh(a) => {
                    let t2 = self.mul(me, me)?;
                    let nt2 = self.neg(t2)?;
                    let d = self.add_scalar(nt2, 1.0)?;
                    contribs.push((a, self.mul(g, d)?));
                }
                Op::Exp(a) => contribs.push((a, self.mul(g, me)?)),
                Op::Log(a) => contribs.push((a, self.div(g, a)?)),
                Op::LogSoftmax(a) => {
                    let k = self.shape(a)[1];
                    let p = self.exp(me)?;
                    let gs = self.row_sum(g)?;
                    let gsb = self.broadcast_cols(gs, k)?;
                    let pg = self.mul(p, gsb)?;
                    contribs.push((a, self.sub(g, pg)?));
                }
                Op::Sum(a) => {
                    let sh = self.shape(a).to_vec();
                    let gg = self.reshape(g, &[])?;
                    contribs.push((a, self.broadcast_scalar(gg, &sh)?));
                }
                Op::BroadcastScalar(a, _) => contribs.push((a, self.sum(g)?)),
                Op::SumRows(a) => {
                    let n = self.shape(a)[0];
                    contribs.push((a, self.broadcast_rows(g, n)?));
                }
                Op::BroadcastRows(a, _) => contribs.push((a, self.sum_rows(g)?)),
                Op::RowSum(a) => {
                    let k = self.shape(a)[1];
                    contribs.push((a, self.broadcast_cols(g, k)?));
                }
                Op::BroadcastCols(a, _) => contribs.push((a, self.row_sum(g)?)),
                Op::Pick(a, sel) => {
                    let k = self.shape(a)[1];
                    contribs.push((a, self.scatter(g, sel, k)?));
                }
                Op::Scatter(a, sel, _) => contribs.push((a, self.pick(g, sel)?)),
                Op::Reshape(a, _) => {
                    let sh = self.shape(a).to_vec();
                    contribs.push((a, self.reshape(g, &sh)?));
                }
                Op::Conv2d { x, w, stride, pad } => {
                    if live(&x) {
                        let xs = self.shape(x).to_vec();
                        contribs.push((x, self.conv2d_input_grad(g, w, stride, pad, xs)?));
                    }
                    if live(&w) {
                        let ws = self.shape(w).to_vec();
                        contribs.push((w, self.conv2d_weight_grad(x, g, stride, pad, ws)?));
                    }
                }
                Op::Conv2dInputGrad { g: up, w, stride, pad, .. } => {
                    // <u, InputGrad(up, w)> = <up, conv(u, w)>
                    if live(&up) {
                        contribs.push((up, self.conv2d(g, w, stride, pad)?));
                    }
                    if live(&w) {
                        let ws = self.shape(w).to_vec();
                        contribs.push((w, self.conv2d_weight_grad(g, up, stride, pad, ws)?));
                    }
                }
                Op::Conv2dWeightGrad { x, g: up, stride, pad, .. } => {
                    // <W, WeightGrad(x, up)> = <up, conv(x, W)>
                    if live(&x) {
                        let xs = self.shape(x).to_vec();
                        contribs.push((x, self.conv2d_input_grad(up, g, stride, pad, xs)?));
                    }
                    if live(&up) {
                        contribs.push((up, self.conv2d(x, g, stride, pad)?));
                    }
                }
                Op::SumChannels(a) => {
                    let sh = self.shape(a).to_vec();
                    contribs.push((a, self.broadcast_channels(g, &sh)?));
                }
                Op::BroadcastChannels(a, _) => contribs.push((a, self.sum_channels(g)?)),
            }
            for (target, c) in contribs {
                if !depends[target.index()] {
                    continue;
                }
                adj[target.index()] = Some(match adj[target.index()] {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        Ok(wrt
            .iter()
            .map(|w| if w.index() < n0 && reach[w.index()] { adj[w.index()] } else { None })
            .collect())
    }

    /// Gradient of `output` w.r.t. every parameter segment.
    pub fn param_gradients(&mut self, output: NodeId) -> Result<Vec<Option<NodeId>>> {
        let params = self.params().to_vec();
        self.gradients(output, &params)
    }
}
