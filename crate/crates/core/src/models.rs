//! MLP and small conv architectures over the autodiff graph.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use tdi_autodiff::{read_tnsr, write_tnsr, Graph, Layout, NodeId, ParamVector, Tensor};

use crate::error::{CoreError, Result};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Mlp,
    Conv,
    /// `f = xW`: one bias-free weight matrix, no hidden layer.
    Linear,
}

/// What the outputs mean; decides the scalarized output rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Value,
    Classifier,
}

fn default_slope() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Per-example input shape: `[d]` for MLPs, `[c, h, w]` for conv nets.
    pub input_shape: Vec<usize>,
    pub hidden: usize,
    #[serde(default)]
    pub extra_layers: usize,
    pub outputs: usize,
    #[serde(default = "default_slope")]
    pub slope: f64,
    pub head: Head,
}

impl ModelSpec {
    pub fn mlp(input: usize, hidden: usize, extra_layers: usize, outputs: usize, head: Head) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_shape: vec![input],
            hidden,
            extra_layers,
            outputs,
            slope: default_slope(),
            head,
        }
    }

    pub fn conv(input_shape: [usize; 3], hidden: usize, extra_layers: usize, outputs: usize, head: Head) -> Self {
        ModelSpec {
            kind: ModelKind::Conv,
            input_shape: input_shape.to_vec(),
            hidden,
            extra_layers,
            outputs,
            slope: default_slope(),
            head,
        }
    }

    /// Bias-free linear map; `hidden` and `extra_layers` are unused.
    pub fn linear(input: usize, outputs: usize, head: Head) -> Self {
        ModelSpec {
            kind: ModelKind::Linear,
            input_shape: vec![input],
            hidden: 0,
            extra_layers: 0,
            outputs,
            slope: default_slope(),
            head,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Spatial size after the three unpadded convolutions.
    fn conv_feature_hw(&self) -> Option<(usize, usize)> {
        let (h, w) = (self.input_shape[1], self.input_shape[2]);
        if h < 5 || w < 5 {
            return None;
        }
        let (h, w) = ((h - 5) / 2 + 1, (w - 5) / 2 + 1);
        if h < 5 || w < 5 {
            return None;
        }
        Some((h - 4, w - 4))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::InvalidSpec(m.to_string()));
        if self.hidden < 1 && self.kind != ModelKind::Linear {
            return bad("hidden width must be at least 1");
        }
        if self.outputs < 1 {
            return bad("output count must be at least 1");
        }
        if !self.slope.is_finite() {
            return bad("activation slope must be finite");
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return bad("input shape must be nonempty with positive extents");
        }
        match self.kind {
            ModelKind::Mlp | ModelKind::Linear if self.input_shape.len() != 1 => bad("mlp input shape must be [d]"),
            ModelKind::Conv if self.input_shape.len() != 3 => bad("conv input shape must be [c, h, w]"),
            ModelKind::Conv if self.conv_feature_hw().is_none() => bad("conv input too small for the layer schema"),
            _ => Ok(()),
        }
    }

    /// Segment table plus the (fan_in, fan_out) of every weight segment.
    fn layout(&self) -> (Layout, Vec<Option<(usize, usize)>>) {
        let mut l = Layout::new();
        let mut fans = Vec::new();
        let mut weight = |l: &mut Layout, name: String, shape: Vec<usize>, fan: (usize, usize)| {
            l.push(name, shape);
            fans.push(Some(fan));
        };
        let h = self.hidden;
        match self.kind {
            ModelKind::Mlp => {
                let mut width = self.input_len();
                for i in 0..=self.extra_layers {
                    weight(&mut l, format!("dense{i}.w"), vec![width, h], (width, h));
                    l.push(format!("dense{i}.b"), vec![h]);
                    width = h;
                }
                weight(&mut l, "out.w".into(), vec![h, self.outputs], (h, self.outputs));
            }
            ModelKind::Conv => {
                let c = self.input_shape[0];
                let convs = [(c, h, 5), (h, 2 * h, 3), (2 * h, 4 * h, 3)]
                    .into_iter()
                    .chain(std::iter::repeat_n((4 * h, 4 * h, 3), self.extra_layers));
                for (i, (cin, cout, k)) in convs.enumerate() {
                    weight(
                        &mut l,
                        format!("conv{i}.w"),
                        vec![cout, cin, k, k],
                        (cin * k * k, cout * k * k),
                    );
                    l.push(format!("conv{i}.b"), vec![cout]);
                }
                let (fh, fw) = self.conv_feature_hw().expect("validated");
                let flat = 4 * h * fh * fw;
                weight(&mut l, "dense0.w".into(), vec![flat, 4 * h], (flat, 4 * h));
                l.push("dense0.b", vec![4 * h]);
                weight(&mut l, "out.w".into(), vec![4 * h, self.outputs], (4 * h, self.outputs));
            }
            ModelKind::Linear => {
                let d = self.input_len();
                weight(&mut l, "out.w".into(), vec![d, self.outputs], (d, self.outputs));
            }
        }
        if self.kind != ModelKind::Linear {
            l.push("out.b", vec![self.outputs]);
        }
        let mut all = Vec::new();
        let mut wi = fans.into_iter();
        for seg in l.segments() {
            all.push(if seg.name.ends_with(".w") { wi.next().flatten() } else { None });
        }
        (l, all)
    }
}

/// Parameters plus the spec that shaped them.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueModel {
    spec: ModelSpec,
    params: ParamVector,
}

/// Graph with a batched input and the model's output node.
#[derive(Clone, Debug)]
pub struct ForwardGraph {
    pub graph: Graph,
    pub input: NodeId,
    pub output: NodeId,
}

impl ValueModel {
    /// Uniform ±√(6/(fan_in+fan_out)) weights, zero biases.
    pub fn init(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let (layout, fans) = spec.layout();
        let layout = Arc::new(layout);
        let mut params = ParamVector::zeros(layout.clone());
        let mut r = rng::stream(seed, "model-init");
        for (i, fan) in fans.iter().enumerate() {
            if let Some((fi, fo)) = fan {
                let bound = (6.0 / (fi + fo) as f64).sqrt();
                for v in params.segment_mut(i) {
                    *v = r.random_range(-bound..=bound);
                }
            }
        }
        Ok(ValueModel { spec: spec.clone(), params })
    }

    pub fn from_params(spec: &ModelSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let (layout, _) = spec.layout();
        if **params.layout() != layout {
            return Err(CoreError::InvalidSpec("parameter layout does not match spec".into()));
        }
        Ok(ValueModel { spec: spec.clone(), params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.params.layout()
    }

    pub fn with_params(&self, params: ParamVector) -> Result<Self> {
        if !params.same_layout(&self.params) {
            return Err(tdi_autodiff::AdError::LayoutMismatch.into());
        }
        Ok(ValueModel {
            spec: self.spec.clone(),
            params,
        })
    }

    pub fn empty_graph(&self) -> Graph {
        Graph::new(self.layout().clone())
    }

    /// Append the network applied to `x` (shape `[n, ...input_shape]`);
    /// returns the `[n, n_o]` output node.
    pub fn build(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let shape = g.shape(x).to_vec();
        if shape.len() != self.spec.input_shape.len() + 1 || shape[1..] != self.spec.input_shape[..] {
            return Err(CoreError::InvalidArgument(format!(
                "input shape {:?} does not match model input {:?}",
                &shape, self.spec.input_shape
            )));
        }
        let n = shape[0];
        let l = self.layout().clone();
        let ids = g.params().to_vec();
        let p = |name: &str| ids[l.find(name).expect("segment exists")];
        let slope = self.spec.slope;
        let mut h = x;
        match self.spec.kind {
            ModelKind::Mlp => {
                for i in 0..=self.spec.extra_layers {
                    let (w, b) = (p(&format!("dense{i}.w")), p(&format!("dense{i}.b")));
                    let z = g.affine(h, w, b)?;
                    h = g.leaky_relu(z, slope)?;
                }
            }
            ModelKind::Conv => {
                let n_conv = 3 + self.spec.extra_layers;
                for i in 0..n_conv {
                    let (w, b) = (p(&format!("conv{i}.w")), p(&format!("conv{i}.b")));
                    let (stride, pad) = match i {
                        0 => (2, 0),
                        1 | 2 => (1, 0),
                        _ => (1, 1),
                    };
                    let c = g.conv2d(h, w, stride, pad)?;
                    let cs = g.shape(c).to_vec();
                    let bb = g.broadcast_channels(b, &cs)?;
                    let z = g.add(c, bb)?;
                    h = g.leaky_relu(z, slope)?;
                }
                let flat: usize = g.shape(h)[1..].iter().product();
                h = g.reshape(h, &[n, flat])?;
                let z = g.affine(h, p("dense0.w"), p("dense0.b"))?;
                h = g.leaky_relu(z, slope)?;
            }
            ModelKind::Linear => return Ok(g.matmul(h, p("out.w"))?),
        }
        let out = g.affine(h, p("out.w"), p("out.b"))?;
        Ok(out)
    }

    /// Fresh graph taking a batch of `n` examples.
    pub fn forward_graph(&self, n: usize) -> Result<ForwardGraph> {
        let mut graph = self.empty_graph();
        let mut shape = vec![n];
        shape.extend_from_slice(&self.spec.input_shape);
        let input = graph.input(&shape);
        let output = self.build(&mut graph, input)?;
        Ok(ForwardGraph { graph, input, output })
    }

    /// Raw scores `[n, n_o]` for a batch `[n, ...input_shape]`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        self.forward_with(&self.params, batch)
    }

    /// Forward pass under different parameters of the same layout.
    pub fn forward_with(&self, params: &ParamVector, batch: &Tensor) -> Result<Tensor> {
        if batch.rank() == 0 {
            return Err(CoreError::InvalidArgument("batch must have a leading dimension".into()));
        }
        let fg = self.forward_graph(batch.shape()[0])?;
        if batch.shape() != fg.graph.shape(fg.input) {
            return Err(CoreError::InvalidArgument(format!(
                "batch shape {:?} does not match model input {:?}",
                batch.shape(),
                self.spec.input_shape
            )));
        }
        Ok(fg.graph.evaluate(params, &[batch], &[fg.output])?.remove(0))
    }

    /// Scalarized output of every row of a batch, from the raw scores.
    pub fn scalar_outputs_with(&self, params: &ParamVector, batch: &Tensor) -> Result<Vec<f64>> {
        let out = self.forward_with(params, batch)?;
        Ok((0..out.shape()[0]).map(|r| scalarize_row(self.spec.head, out.row(r))).collect())
    }

    /// Scalarized output of a `[1, n_o]` output node (argmax rule): the
    /// softmax probability of the argmax class for classifiers, the maximal
    /// output for value heads. Returns a rank-0 node.
    pub fn scalarize(&self, g: &mut Graph, out: NodeId) -> Result<NodeId> {
        let s = if self.spec.outputs == 1 && self.spec.head == Head::Value {
            out
        } else {
            match self.spec.head {
                Head::Value => g.max_cols(out)?,
                Head::Classifier => {
                    let p = g.softmax(out)?;
                    g.pick(p, tdi_autodiff::Selector::ArgmaxOf(out))?
                }
            }
        };
        Ok(g.reshape(s, &[])?)
    }

    /// Graph computing the scalarized output for one example.
    pub fn scalar_output_graph(&self) -> Result<(Graph, NodeId)> {
        let mut fg = self.forward_graph(1)?;
        let s = self.scalarize(&mut fg.graph, fg.output)?;
        Ok((fg.graph, s))
    }

    /// Scalarized output value for a single example (shape `input_shape`).
    pub fn scalar_output(&self, x: &Tensor) -> Result<f64> {
        let (g, s) = self.scalar_output_graph()?;
        let xb = self.single(x)?;
        Ok(g.evaluate(&self.params, &[&xb], &[s])?[0].item())
    }

    /// Add a leading batch axis after checking the example's shape.
    pub fn single(&self, x: &Tensor) -> Result<Tensor> {
        if x.shape() != self.spec.input_shape.as_slice() {
            return Err(CoreError::InvalidArgument(format!(
                "example shape {:?} does not match model input {:?}",
                x.shape(),
                self.spec.input_shape
            )));
        }
        Ok(x.unsqueeze0())
    }

    /// Write `<stem>.tnsr` (flat params) and `<stem>.json` (spec and seed).
    pub fn save_checkpoint(&self, dir: &Path, stem: &str, seed: u64) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let t = Tensor::vector(self.params.data().to_vec());
        write_tnsr(BufWriter::new(File::create(dir.join(format!("{stem}.tnsr")))?), &t)?;
        let side = Sidecar {
            spec: self.spec.clone(),
            seed,
            segments: self
                .layout()
                .segments()
                .iter()
                .map(|s| (s.name.clone(), s.shape.clone()))
                .collect(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join(format!("{stem}.json")))?), &side)?;
        Ok(())
    }

    /// Returns the model and its recorded seed.
    pub fn load_checkpoint(dir: &Path, stem: &str) -> Result<(Self, u64)> {
        let side: Sidecar = serde_json::from_reader(BufReader::new(File::open(dir.join(format!("{stem}.json")))?))?;
        let t = read_tnsr(BufReader::new(File::open(dir.join(format!("{stem}.tnsr")))?))?;
        let (layout, _) = side.spec.layout();
        let params = ParamVector::from_data(Arc::new(layout), t.into_data())?;
        Ok((ValueModel::from_params(&side.spec, params)?, side.seed))
    }
}

/// Numeric twin of [`ValueModel::scalarize`] for one row of scores.
pub fn scalarize_row(head: Head, row: &[f64]) -> f64 {
    let best = crate::env::argmax(row);
    match head {
        Head::Value => row[best],
        Head::Classifier => {
            let m = row[best];
            1.0 / row.iter().map(|v| (v - m).exp()).sum::<f64>()
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    spec: ModelSpec,
    seed: u64,
    segments: Vec<(String, Vec<usize>)>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn value_mlp(n_o: usize) -> ModelSpec {
        ModelSpec::mlp(3, 4, 1, n_o, Head::Value)
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = value_mlp(2);
        let a = ValueModel::init(&s, 7).unwrap();
        let b = ValueModel::init(&s, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ValueModel::init(&s, 8).unwrap());
        for (i, seg) in a.layout().segments().iter().enumerate() {
            if seg.name.ends_with(".b") {
                assert!(a.params().segment(i).iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn init_respects_bound() {
        let s = ModelSpec::mlp(100, 100, 0, 1, Head::Value);
        let m = ValueModel::init(&s, 1).unwrap();
        let i = m.layout().find("dense0.w").unwrap();
        let bound = (6.0f64 / 200.0).sqrt();
        assert!((bound - 0.1732).abs() < 1e-4);
        let seg = m.params().segment(i);
        assert!(seg.iter().all(|v| v.abs() <= bound));
        assert!(seg.iter().any(|v| v.abs() > 0.9 * bound));
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = value_mlp(1);
        s.hidden = 0;
        assert!(ValueModel::init(&s, 0).is_err());
        let mut s = value_mlp(1);
        s.outputs = 0;
        assert!(ValueModel::init(&s, 0).is_err());
        let c = ModelSpec::conv([1, 8, 8], 2, 0, 3, Head::Value);
        assert!(ValueModel::init(&c, 0).is_err());
    }

    #[test]
    fn conv_schema_matches_feature_size() {
        let s = ModelSpec::conv([3, 32, 32], 2, 1, 10, Head::Classifier);
        let m = ValueModel::init(&s, 3).unwrap();
        let w = m.layout().segment(m.layout().find("dense0.w").unwrap());
        assert_eq!(w.shape, vec![8 * 10 * 10, 8]);
        assert_eq!(m.layout().segment(m.layout().find("conv3.w").unwrap()).shape, vec![8, 8, 3, 3]);
        let out = m.forward(&Tensor::zeros(&[2, 3, 32, 32])).unwrap();
        assert_eq!(out.shape(), &[2, 10]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let s = value_mlp(2);
        let m = ValueModel::init(&s, 0).unwrap();
        let m = m.with_params(ParamVector::zeros(m.layout().clone())).unwrap();
        let x = Tensor::matrix(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]);
        assert!(m.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_set_two_unit_mlp() {
        // x=(1,−1); hidden W=[[1,2],[3,−1]], b=(0,0.5) → z=(−2,3.5) → h=(−0.02,3.5)
        // out W=(1,1), b=0.25 → 3.73
        let s = ModelSpec::mlp(2, 2, 0, 1, Head::Value);
        let m = ValueModel::init(&s, 0).unwrap();
        let p = ParamVector::from_data(m.layout().clone(), vec![1.0, 2.0, 3.0, -1.0, 0.0, 0.5, 1.0, 1.0, 0.25]).unwrap();
        let m = m.with_params(p).unwrap();
        let y = m.forward(&Tensor::matrix(&[vec![1.0, -1.0]])).unwrap();
        assert!((y.item() - 3.73).abs() < 1e-12);
        assert!((m.scalar_output(&Tensor::vector(vec![1.0, -1.0])).unwrap() - 3.73).abs() < 1e-12);
    }

    #[test]
    fn forward_rejects_shape_mismatch() {
        let m = ValueModel::init(&value_mlp(1), 0).unwrap();
        assert!(m.forward(&Tensor::zeros(&[2, 4])).is_err());
        assert!(m.scalar_output(&Tensor::zeros(&[4])).is_err());
    }

    /// Model whose outputs equal the given constants regardless of input.
    fn constant_output(head: Head, outs: &[f64]) -> ValueModel {
        let s = ModelSpec::mlp(1, 1, 0, outs.len(), head);
        let m = ValueModel::init(&s, 0).unwrap();
        let mut p = ParamVector::zeros(m.layout().clone());
        let b = m.layout().find("out.b").unwrap();
        p.segment_mut(b).copy_from_slice(outs);
        m.with_params(p).unwrap()
    }

    #[test]
    fn scalar_output_rules() {
        let x = Tensor::vector(vec![0.3]);
        assert_eq!(constant_output(Head::Value, &[2.5]).scalar_output(&x).unwrap(), 2.5);
        let p = constant_output(Head::Classifier, &[1.0, 3.0, 2.0]).scalar_output(&x).unwrap();
        let e = |v: f64| v.exp();
        assert!((p - e(3.0) / (e(1.0) + e(2.0) + e(3.0))).abs() < 1e-15);
        assert!((p - 0.6652).abs() < 1e-4);
        assert_eq!(constant_output(Head::Value, &[0.1, 0.9, 0.9]).scalar_output(&x).unwrap(), 0.9);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = ModelSpec::conv([1, 13, 13], 1, 0, 2, Head::Value);
        let m = ValueModel::init(&s, 5).unwrap();
        m.save_checkpoint(dir.path(), "ckpt", 5).unwrap();
        let (back, seed) = ValueModel::load_checkpoint(dir.path(), "ckpt").unwrap();
        assert_eq!(seed, 5);
        assert_eq!(back, m);
    }
}
