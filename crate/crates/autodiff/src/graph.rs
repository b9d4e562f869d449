//! Computation graphs over [`Tensor`]s.
//!
//! A [`Graph`] is an append-only list of nodes; insertion order is a valid
//! topological order. Parameter leaves are created up front from a [`Layout`],
//! input leaves on demand. Gradients are built symbolically as new nodes in
//! the same graph (see `backward.rs`), so a gradient graph can itself be
//! differentiated again.

use std::sync::Arc;

use crate::error::{AdError, Result};
use crate::kernels;
use crate::param::{Layout, ParamVector};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a row-wise pick chooses its column.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Selector {
    /// Column of the (first) maximum of the given `[n, k]` node, per row.
    ArgmaxOf(NodeId),
    /// Column given by an integer-valued `[n]` node (typically an input).
    Index(NodeId),
}

#[derive(Clone, Debug)]
pub enum Op {
    Param(usize),
    Input(usize),
    Const(Tensor),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId, f64),
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    LeakyRelu(NodeId, f64),
    /// Elementwise derivative of leaky ReLU: 1 where x > 0, else the slope.
    LeakySlope(NodeId, f64),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// Row-wise log-softmax of a `[n, k]` node.
    LogSoftmax(NodeId),
    /// Sum of all elements; rank-0 result.
    Sum(NodeId),
    /// Rank-0 → given shape.
    BroadcastScalar(NodeId, Vec<usize>),
    /// `[n, k]` → `[k]`.
    SumRows(NodeId),
    /// `[k]` → `[n, k]`.
    BroadcastRows(NodeId, usize),
    /// `[n, k]` → `[n, 1]`.
    RowSum(NodeId),
    /// `[n, 1]` → `[n, k]`.
    BroadcastCols(NodeId, usize),
    /// `[n, k]` → `[n, 1]`, one column per row.
    Pick(NodeId, Selector),
    /// `[n, 1]` → `[n, k]`, zero except at the selected column.
    Scatter(NodeId, Selector, usize),
    Reshape(NodeId, Vec<usize>),
    /// NCHW input, OIHW weight.
    Conv2d {
        x: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
    },
    /// Adjoint of `Conv2d` w.r.t. its input.
    Conv2dInputGrad {
        g: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        in_shape: Vec<usize>,
    },
    /// Adjoint of `Conv2d` w.r.t. its weight.
    Conv2dWeightGrad {
        x: NodeId,
        g: NodeId,
        stride: usize,
        pad: usize,
        w_shape: Vec<usize>,
    },
    /// `[n, c, h, w]` → `[c]`.
    SumChannels(NodeId),
    /// `[c]` → `[n, c, h, w]`.
    BroadcastChannels(NodeId, Vec<usize>),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Param(_) => "param",
            Op::Input(_) => "input",
            Op::Const(_) => "const",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::LeakySlope(..) => "leaky_slope",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::SumRows(_) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::RowSum(_) => "row_sum",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Pick(..) => "pick",
            Op::Scatter(..) => "scatter",
            Op::Reshape(..) => "reshape",
            Op::Conv2d { .. } => "conv2d",
            Op::Conv2dInputGrad { .. } => "conv2d_input_grad",
            Op::Conv2dWeightGrad { .. } => "conv2d_weight_grad",
            Op::SumChannels(_) => "sum_channels",
            Op::BroadcastChannels(..) => "broadcast_channels",
        }
    }

    /// Node ids this op reads, selector keys included.
    pub fn inputs(&self) -> Vec<NodeId> {
        fn sel(s: &Selector) -> NodeId {
            match s {
                Selector::ArgmaxOf(k) | Selector::Index(k) => *k,
            }
        }
        match self {
            Op::Param(_) | Op::Input(_) | Op::Const(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::Transpose(a)
            | Op::LeakyRelu(a, _)
            | Op::LeakySlope(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::BroadcastScalar(a, _)
            | Op::SumRows(a)
            | Op::BroadcastRows(a, _)
            | Op::RowSum(a)
            | Op::BroadcastCols(a, _)
            | Op::Reshape(a, _)
            | Op::SumChannels(a)
            | Op::BroadcastChannels(a, _) => vec![*a],
            Op::Pick(a, s) | Op::Scatter(a, s, _) => vec![*a, sel(s)],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::Conv2dInputGrad { g, w, .. } => vec![*g, *w],
            Op::Conv2dWeightGrad { x, g, .. } => vec![*x, *g],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
}

/// Append-only computation graph; node order is topological.
#[derive(Clone, Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    layout: Arc<Layout>,
    params: Vec<NodeId>,
    inputs: Vec<NodeId>,
}

impl Graph {
    /// New graph with one parameter leaf per layout segment.
    pub fn new(layout: Arc<Layout>) -> Self {
        let mut g = Graph {
            nodes: Vec::new(),
            layout: layout.clone(),
            params: Vec::new(),
            inputs: Vec::new(),
        };
        for (i, seg) in layout.segments().iter().enumerate() {
            g.nodes.push(Node {
                op: Op::Param(i),
                shape: seg.shape.clone(),
            });
            g.params.push(NodeId(g.nodes.len() - 1));
        }
        g
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Parameter leaf for each layout segment, in layout order.
    pub fn params(&self) -> &[NodeId] {
        &self.params
    }

    pub fn param(&self, segment: usize) -> NodeId {
        self.params[segment]
    }

    pub fn input_count(&self) -> usize {
        self.inputs.len()
    }

    pub fn input_nodes(&self) -> &[NodeId] {
        &self.inputs
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    fn err(&self, op: &'static str, detail: String) -> AdError {
        AdError::Shape {
            node: self.nodes.len(),
            op,
            detail,
        }
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AdError::UnknownNode(id.0))
        }
    }

    fn push(&mut self, op: Op) -> Result<NodeId> {
        for i in op.inputs() {
            self.check_id(i)?;
        }
        let shape = self.infer(&op)?;
        self.nodes.push(Node { op, shape });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn infer(&self, op: &Op) -> Result<Vec<usize>> {
        let s = |id: &NodeId| self.nodes[id.0].shape.clone();
        let name = op.name();
        let rank2 = |id: &NodeId| -> Result<(usize, usize)> {
            let sh = s(id);
            if sh.len() != 2 {
                return Err(self.err(name, format!("expected rank 2, got {sh:?}")));
            }
            Ok((sh[0], sh[1]))
        };
        Ok(match op {
            Op::Param(i) => self.layout.segment(*i).shape.clone(),
            Op::Input(_) => unreachable!("inputs are created by add_input"),
            Op::Const(t) => t.shape().to_vec(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                if s(a) != s(b) {
                    return Err(self.err(name, format!("{:?} vs {:?}", s(a), s(b))));
                }
                s(a)
            }
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::AddScalar(a, _)
            | Op::LeakyRelu(a, _)
            | Op::LeakySlope(a, _)
            | Op::Tanh(a)
            | Op::Exp(a)
            | Op::Log(a) => s(a),
            Op::LogSoftmax(a) => {
                rank2(a)?;
                s(a)
            }
            Op::MatMul(a, b) => {
                let (n, k) = rank2(a)?;
                let (k2, m) = rank2(b)?;
                if k != k2 {
                    return Err(self.err(name, format!("[{n},{k}]·[{k2},{m}]")));
                }
                vec![n, m]
            }
            Op::Transpose(a) => {
                let (n, k) = rank2(a)?;
                vec![k, n]
            }
            Op::Sum(_) => vec![],
            Op::BroadcastScalar(a, shape) => {
                if !s(a).is_empty() {
                    return Err(self.err(name, format!("operand must be rank 0, got {:?}", s(a))));
                }
                shape.clone()
            }
            Op::SumRows(a) => {
                let (_, k) = rank2(a)?;
                vec![k]
            }
            Op::BroadcastRows(a, n) => {
                let sh = s(a);
                if sh.len() != 1 {
                    return Err(self.err(name, format!("operand must be rank 1, got {sh:?}")));
                }
                vec![*n, sh[0]]
            }
            Op::RowSum(a) => {
                let (n, _) = rank2(a)?;
                vec![n, 1]
            }
            Op::BroadcastCols(a, k) => {
                let (n, c) = rank2(a)?;
                if c != 1 {
                    return Err(self.err(name, format!("operand must be [n,1], got [{n},{c}]")));
                }
                vec![n, *k]
            }
            Op::Pick(a, sel) => {
                let (n, _) = rank2(a)?;
                self.check_selector(name, sel, n)?;
                vec![n, 1]
            }
            Op::Scatter(a, sel, k) => {
                let (n, c) = rank2(a)?;
                if c != 1 {
                    return Err(self.err(name, format!("operand must be [n,1], got [{n},{c}]")));
                }
                self.check_selector(name, sel, n)?;
                if let Selector::ArgmaxOf(key) = sel {
                    if s(key)[1] != *k {
                        return Err(self.err(name, "key width differs from scatter width".into()));
                    }
                }
                vec![n, *k]
            }
            Op::Reshape(a, shape) => {
                if numel(&s(a)) != numel(shape) {
                    return Err(self.err(name, format!("{:?} → {:?}", s(a), shape)));
                }
                shape.clone()
            }
            Op::Conv2d { x, w, stride, pad } => {
                let (xs, ws) = (s(x), s(w));
                if xs.len() != 4 || ws.len() != 4 || xs[1] != ws[1] || *stride == 0 {
                    return Err(self.err(name, format!("x {xs:?}, w {ws:?}, stride {stride}")));
                }
                let (oh, ow) = kernels::conv_out_hw(xs[2], xs[3], ws[2], ws[3], *stride, *pad)
                    .ok_or_else(|| self.err(name, format!("kernel {ws:?} larger than input {xs:?}")))?;
                vec![xs[0], ws[0], oh, ow]
            }
            Op::Conv2dInputGrad {
                g,
                w,
                stride,
                pad,
                in_shape,
            } => {
                let (gs, ws) = (s(g), s(w));
                let expect = kernels::conv_out_hw(in_shape[2], in_shape[3], ws[2], ws[3], *stride, *pad);
                if gs.len() != 4
                    || in_shape.len() != 4
                    || ws[1] != in_shape[1]
                    || gs[1] != ws[0]
                    || gs[0] != in_shape[0]
                    || expect != Some((gs[2], gs[3]))
                {
                    return Err(self.err(name, format!("g {gs:?}, w {ws:?}, in {in_shape:?}")));
                }
                in_shape.clone()
            }
            Op::Conv2dWeightGrad {
                x,
                g,
                stride,
                pad,
                w_shape,
            } => {
                let (xs, gs) = (s(x), s(g));
                let expect = kernels::conv_out_hw(xs[2], xs[3], w_shape[2], w_shape[3], *stride, *pad);
                if xs.len() != 4
                    || gs.len() != 4
                    || w_shape.len() != 4
                    || xs[0] != gs[0]
                    || xs[1] != w_shape[1]
                    || gs[1] != w_shape[0]
                    || expect != Some((gs[2], gs[3]))
                {
                    return Err(self.err(name, format!("x {xs:?}, g {gs:?}, w {w_shape:?}")));
                }
                w_shape.clone()
            }
            Op::SumChannels(a) => {
                let sh = s(a);
                if sh.len() != 4 {
                    return Err(self.err(name, format!("expected rank 4, got {sh:?}")));
                }
                vec![sh[1]]
            }
            Op::BroadcastChannels(a, shape) => {
                let sh = s(a);
                if sh.len() != 1 || shape.len() != 4 || shape[1] != sh[0] {
                    return Err(self.err(name, format!("{sh:?} → {shape:?}")));
                }
                shape.clone()
            }
        })
    }

    fn check_selector(&self, name: &'static str, sel: &Selector, n: usize) -> Result<()> {
        match sel {
            Selector::ArgmaxOf(k) => {
                let ks = &self.nodes[k.0].shape;
                if ks.len() != 2 || ks[0] != n {
                    return Err(self.err(name, format!("argmax key {ks:?} for {n} rows")));
                }
            }
            Selector::Index(k) => {
                let ks = &self.nodes[k.0].shape;
                if numel(ks) != n {
                    return Err(self.err(name, format!("index {ks:?} for {n} rows")));
                }
            }
        }
        Ok(())
    }

    // ---- builders ----

    /// Declare a new input leaf with a fixed shape; inputs are fed by slot order.
    pub fn input(&mut self, shape: &[usize]) -> NodeId {
        let slot = self.inputs.len();
        self.nodes.push(Node {
            op: Op::Input(slot),
            shape: shape.to_vec(),
        });
        let id = NodeId(self.nodes.len() - 1);
        self.inputs.push(id);
        id
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        let shape = t.shape().to_vec();
        self.nodes.push(Node {
            op: Op::Const(t),
            shape,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }
    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Sub(a, b))
    }
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }
    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Div(a, b))
    }
    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Neg(a))
    }
    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, c))
    }
    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::AddScalar(a, c))
    }
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }
    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Transpose(a))
    }
    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.push(Op::LeakyRelu(a, slope))
    }
    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }
    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Exp(a))
    }
    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Log(a))
    }
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSoftmax(a))
    }
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let ls = self.log_softmax(a)?;
        self.exp(ls)
    }
    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = numel(self.shape(a));
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }
    pub fn broadcast_scalar(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::BroadcastScalar(a, shape.to_vec()))
    }
    pub fn sum_rows(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumRows(a))
    }
    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> Result<NodeId> {
        self.push(Op::BroadcastRows(a, n))
    }
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::RowSum(a))
    }
    pub fn broadcast_cols(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        self.push(Op::BroadcastCols(a, k))
    }
    pub fn pick(&mut self, a: NodeId, sel: Selector) -> Result<NodeId> {
        self.push(Op::Pick(a, sel))
    }
    /// Row-wise maximum `[n, k]` → `[n, 1]`; gradient flows to the first maximal column.
    pub fn max_cols(&mut self, a: NodeId) -> Result<NodeId> {
        self.pick(a, Selector::ArgmaxOf(a))
    }
    /// Row-wise gather by an integer-valued index node.
    pub fn gather(&mut self, a: NodeId, index: NodeId) -> Result<NodeId> {
        self.pick(a, Selector::Index(index))
    }
    pub fn scatter(&mut self, a: NodeId, sel: Selector, k: usize) -> Result<NodeId> {
        self.push(Op::Scatter(a, sel, k))
    }
    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        if self.shape(a) == shape {
            return Ok(a);
        }
        self.push(Op::Reshape(a, shape.to_vec()))
    }
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> Result<NodeId> {
        self.push(Op::Conv2d { x, w, stride, pad })
    }
    pub(crate) fn conv2d_input_grad(
        &mut self,
        g: NodeId,
        w: NodeId,
        stride: usize,
        pad: usize,
        in_shape: Vec<usize>,
    ) -> Result<NodeId> {
        self.push(Op::Conv2dInputGrad {
            g,
            w,
            stride,
            pad,
            in_shape,
        })
    }
    pub(crate) fn conv2d_weight_grad(
        &mut self,
        x: NodeId,
        g: NodeId,
        stride: usize,
        pad: usize,
        w_shape: Vec<usize>,
    ) -> Result<NodeId> {
        self.push(Op::Conv2dWeightGrad {
            x,
            g,
            stride,
            pad,
            w_shape,
        })
    }
    pub fn sum_channels(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::SumChannels(a))
    }
    pub fn broadcast_channels(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::BroadcastChannels(a, shape.to_vec()))
    }
    pub(crate) fn leaky_slope(&mut self, a: NodeId, slope: f64) -> Result<NodeId> {
        self.push(Op::LeakySlope(a, slope))
    }

    /// `x·W + b` for `x: [n, in]`, `W: [in, out]`, `b: [out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xw = self.matmul(x, w)?;
        let n = self.shape(x)[0];
        let bb = self.broadcast_rows(b, n)?;
        self.add(xw, bb)
    }

    /// Σ (a − b)², rank-0.
    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let d = self.sub(a, b)?;
        let d2 = self.mul(d, d)?;
        self.sum(d2)
    }

    /// Σ over rows of −log softmax(logits)[label]; labels is an integer-valued `[n]` node.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: NodeId) -> Result<NodeId> {
        let ls = self.log_softmax(logits)?;
        let picked = self.gather(ls, labels)?;
        let s = self.sum(picked)?;
        self.neg(s)
    }

    // ---- evaluation ----

    /// Forward values of every node `outputs` depends on.
    pub fn evaluate(
        &self,
        params: &ParamVector,
        inputs: &[&Tensor],
        outputs: &[NodeId],
    ) -> Result<Vec<Tensor>> {
        let values = self.eval_values(params, inputs, outputs)?;
        Ok(outputs
            .iter()
            .map(|o| values[o.0].clone().expect("requested output evaluated"))
            .collect())
    }

    pub(crate) fn eval_values(
        &self,
        params: &ParamVector,
        inputs: &[&Tensor],
        outputs: &[NodeId],
    ) -> Result<Vec<Option<Tensor>>> {
        if **params.layout() != *self.layout {
            return Err(AdError::LayoutMismatch);
        }
        if inputs.len() != self.inputs.len() {
            return Err(AdError::InputCount {
                expected: self.inputs.len(),
                got: inputs.len(),
            });
        }
        for o in outputs {
            self.check_id(*o)?;
        }
        let needed = self.ancestors(outputs);
        let mut values: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if !needed[i] {
                continue;
            }
            let v = self.eval_node(i, node, params, inputs, &values)?;
            values[i] = Some(v);
        }
        Ok(values)
    }

    /// Mask of nodes that `outputs` transitively read.
    pub(crate) fn ancestors(&self, outputs: &[NodeId]) -> Vec<bool> {
        let mut mark = vec![false; self.nodes.len()];
        for o in outputs {
            mark[o.0] = true;
        }
        for i in (0..self.nodes.len()).rev() {
            if mark[i] {
                for j in self.nodes[i].op.inputs() {
                    mark[j.0] = true;
                }
            }
        }
        mark
    }

    fn eval_node(
        &self,
        i: usize,
        node: &Node,
        params: &ParamVector,
        inputs: &[&Tensor],
        values: &[Option<Tensor>],
    ) -> Result<Tensor> {
        let v = |id: &NodeId| values[id.0].as_ref().expect("topological order");
        let out = match &node.op {
            Op::Param(s) => params.segment_tensor(*s),
            Op::Input(slot) => {
                let t = inputs[*slot];
                if t.shape() != node.shape.as_slice() {
                    return Err(AdError::Shape {
                        node: i,
                        op: "input",
                        detail: format!("declared {:?}, fed {:?}", node.shape, t.shape()),
                    });
                }
                t.clone()
            }
            Op::Const(t) => t.clone(),
            Op::Add(a, b) => kernels::zip(v(a), v(b), |x, y| x + y),
            Op::Sub(a, b) => kernels::zip(v(a), v(b), |x, y| x - y),
            Op::Mul(a, b) => kernels::zip(v(a), v(b), |x, y| x * y),
            Op::Div(a, b) => kernels::zip(v(a), v(b), |x, y| x / y),
            Op::Neg(a) => kernels::map(v(a), |x| -x),
            Op::Scale(a, c) => kernels::map(v(a), |x| c * x),
            Op::AddScalar(a, c) => kernels::map(v(a), |x| x + c),
            Op::MatMul(a, b) => kernels::matmul(v(a), v(b)),
            Op::Transpose(a) => kernels::transpose(v(a)),
            Op::LeakyRelu(a, s) => kernels::map(v(a), |x| if x > 0.0 { x } else { s * x }),
            Op::LeakySlope(a, s) => kernels::map(v(a), |x| if x > 0.0 { 1.0 } else { *s }),
            Op::Tanh(a) => kernels::map(v(a), f64::tanh),
            Op::Exp(a) => kernels::map(v(a), f64::exp),
            Op::Log(a) => kernels::map(v(a), f64::ln),
            Op::LogSoftmax(a) => kernels::log_softmax(v(a)),
            Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
            Op::BroadcastScalar(a, shape) => Tensor::full(shape, v(a).item()),
            Op::SumRows(a) => kernels::sum_rows(v(a)),
            Op::BroadcastRows(a, n) => kernels::broadcast_rows(v(a), *n),
            Op::RowSum(a) => kernels::row_sum(v(a)),
            Op::BroadcastCols(a, k) => kernels::broadcast_cols(v(a), *k),
            Op::Pick(a, sel) => {
                let cols = self.selected_columns(i, sel, values, v(a).shape()[1])?;
                kernels::pick(v(a), &cols)
            }
            Op::Scatter(a, sel, k) => {
                let cols = self.selected_columns(i, sel, values, *k)?;
                kernels::scatter(v(a), &cols, *k)
            }
            Op::Reshape(a, shape) => Tensor::from_parts(shape.clone(), v(a).data().to_vec()),
            Op::Conv2d { x, w, stride, pad } => kernels::conv2d(v(x), v(w), *stride, *pad),
            Op::Conv2dInputGrad {
                g,
                w,
                stride,
                pad,
                in_shape,
            } => kernels::conv2d_input_grad(v(g), v(w), *stride, *pad, in_shape),
            Op::Conv2dWeightGrad {
                x,
                g,
                stride,
                pad,
                w_shape,
            } => kernels::conv2d_weight_grad(v(x), v(g), *stride, *pad, w_shape),
            Op::SumChannels(a) => kernels::sum_channels(v(a)),
            Op::BroadcastChannels(a, shape) => kernels::broadcast_channels(v(a), shape),
        };
        Ok(out)
    }

    fn selected_columns(
        &self,
        node: usize,
        sel: &Selector,
        values: &[Option<Tensor>],
        width: usize,
    ) -> Result<Vec<usize>> {
        match sel {
            Selector::ArgmaxOf(k) => {
                let key = values[k.0].as_ref().expect("topological order");
                Ok(kernels::argmax_rows(key))
            }
            Selector::Index(k) => {
                let idx = values[k.0].as_ref().expect("topological order");
                idx.data()
                    .iter()
                    .map(|&x| {
                        if x >= 0.0 && x.fract() == 0.0 && (x as usize) < width {
                            Ok(x as usize)
                        } else {
                            Err(AdError::IndexOutOfRange {
                                node,
                                index: x,
                                len: width,
                            })
                        }
                    })
                    .collect()
            }
        }
    }
}
