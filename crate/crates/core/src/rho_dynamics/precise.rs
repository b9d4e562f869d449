//! Dense-network forward and backward passes over a generic scalar, used to
//! evaluate finite-difference quantities in double-double arithmetic.

use std::ops::{Add, Mul, Neg, Range, Sub};

use tdi_autodiff::{ParamVector, Tensor};
use twofloat::TwoFloat;

use crate::error::{CoreError, Result};
use crate::models::{Head, ModelKind, ValueModel};
use crate::sample::{LossSample, LossTarget};

pub(crate) trait Real:
    Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> + Neg<Output = Self> + PartialOrd
{
    fn of(v: f64) -> Self;
    fn exp(self) -> Self;
    fn div(self, other: Self) -> Self;
    fn value(self) -> f64;
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn div(self, other: Self) -> Self {
        self / other
    }
    fn value(self) -> f64 {
        self
    }
}

impl Real for TwoFloat {
    fn of(v: f64) -> Self {
        TwoFloat::from(v)
    }
    fn exp(self) -> Self {
        TwoFloat::exp(self)
    }
    /// One Newton correction on top of the library quotient.
    fn div(self, other: Self) -> Self {
        let q = self / other;
        let r = self - q * other;
        q + TwoFloat::from(r.hi() / other.hi())
    }
    fn value(self) -> f64 {
        f64::from(self)
    }
}

struct Dense {
    n_in: usize,
    n_out: usize,
    w: Range<usize>,
    b: Option<Range<usize>>,
}

/// A fully connected model with parameters held in `R`.
pub(crate) struct Net<R> {
    layers: Vec<Dense>,
    theta: Vec<R>,
    slope: R,
    head: Head,
}

struct Cache<R> {
    inputs: Vec<Vec<R>>,
    pre: Vec<Vec<R>>,
    out: Vec<R>,
}

pub(crate) fn supports(model: &ValueModel) -> bool {
    model.spec().kind != ModelKind::Conv
}

/// `base − α·dir` evaluated in `R`.
pub(crate) fn stepped<R: Real>(base: &ParamVector, alpha: f64, dir: &ParamVector) -> Vec<R> {
    let a = R::of(alpha);
    base.data().iter().zip(dir.data()).map(|(&t, &d)| R::of(t) - a * R::of(d)).collect()
}

pub(crate) fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    a.iter().zip(b).fold(R::of(0.0), |acc, (&x, &y)| acc + x * y)
}

fn softmax<R: Real>(out: &[R]) -> Vec<R> {
    let m = out.iter().copied().fold(out[0], |m, v| if v > m { v } else { m });
    let e: Vec<R> = out.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().copied().fold(R::of(0.0), |a, v| a + v);
    e.into_iter().map(|v| v.div(s)).collect()
}

fn argmax<R: Real>(row: &[R]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

impl<R: Real> Net<R> {
    pub fn new(model: &ValueModel, theta: Vec<R>) -> Result<Self> {
        let spec = model.spec();
        let layout = model.layout();
        if theta.len() != layout.len() {
            return Err(CoreError::InvalidArgument("parameter count differs from the layout".into()));
        }
        let range = |name: &str| layout.find(name).map(|i| layout.segment(i).range());
        let mut layers = Vec::new();
        let mut width = spec.input_len();
        match spec.kind {
            ModelKind::Conv => {
                return Err(CoreError::InvalidArgument("convolutional models have no dense evaluator".into()))
            }
            ModelKind::Mlp => {
                for i in 0..=spec.extra_layers {
                    layers.push(Dense {
                        n_in: width,
                        n_out: spec.hidden,
                        w: range(&format!("dense{i}.w")).expect("segment exists"),
                        b: range(&format!("dense{i}.b")),
                    });
                    width = spec.hidden;
                }
            }
            ModelKind::Linear => {}
        }
        layers.push(Dense {
            n_in: width,
            n_out: spec.outputs,
            w: range("out.w").expect("segment exists"),
            b: range("out.b"),
        });
        Ok(Net {
            layers,
            theta,
            slope: R::of(spec.slope),
            head: spec.head,
        })
    }

    fn forward(&self, x: &Tensor) -> Cache<R> {
        let mut h: Vec<R> = x.data().iter().map(|&v| R::of(v)).collect();
        let mut inputs = Vec::new();
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (l, d) in self.layers.iter().enumerate() {
            let w = &self.theta[d.w.clone()];
            let z: Vec<R> = (0..d.n_out)
                .map(|j| {
                    let b = d.b.as_ref().map_or(R::of(0.0), |b| self.theta[b.start + j]);
                    (0..d.n_in).fold(b, |acc, i| acc + h[i] * w[i * d.n_out + j])
                })
                .collect();
            inputs.push(h);
            if l == last {
                return Cache { inputs, pre, out: z };
            }
            h = z.iter().map(|&v| if v > R::of(0.0) { v } else { v * self.slope }).collect();
            pre.push(z);
        }
        unreachable!("the output layer returns")
    }

    fn backward(&self, cache: &Cache<R>, dout: Vec<R>) -> Vec<R> {
        let mut g = vec![R::of(0.0); self.theta.len()];
        let mut delta = dout;
        for (l, d) in self.layers.iter().enumerate().rev() {
            let inp = &cache.inputs[l];
            for i in 0..d.n_in {
                for j in 0..d.n_out {
                    g[d.w.start + i * d.n_out + j] = inp[i] * delta[j];
                }
            }
            if let Some(b) = &d.b {
                g[b.clone()].copy_from_slice(&delta);
            }
            if l == 0 {
                break;
            }
            let w = &self.theta[d.w.clone()];
            delta = (0..d.n_in)
                .map(|i| {
                    let s = (0..d.n_out).fold(R::of(0.0), |acc, j| acc + w[i * d.n_out + j] * delta[j]);
                    if cache.pre[l - 1][i] > R::of(0.0) {
                        s
                    } else {
                        s * self.slope
                    }
                })
                .collect();
        }
        g
    }

    /// Prediction and its derivative with respect to the raw outputs.
    fn select(&self, out: &[R], action: Option<usize>) -> (R, Vec<R>) {
        let n = out.len();
        let mut dout = vec![R::of(0.0); n];
        if let Some(a) = action {
            dout[a] = R::of(1.0);
            return (out[a], dout);
        }
        let k = argmax(out);
        if n == 1 || self.head == Head::Value {
            dout[k] = R::of(1.0);
            return (out[k], dout);
        }
        let p = softmax(out);
        for j in 0..n {
            let kron = if j == k { R::of(1.0) } else { R::of(0.0) };
            dout[j] = p[k] * (kron - p[j]);
        }
        (p[k], dout)
    }

    /// `(f, ∇f)`.
    pub fn prediction(&self, x: &Tensor, action: Option<usize>) -> (R, Vec<R>) {
        let c = self.forward(x);
        let (f, dout) = self.select(&c.out, action);
        let g = self.backward(&c, dout);
        (f, g)
    }

    /// Signs of every hidden pre-activation plus the argmax used by the
    /// prediction; constant wherever the prediction is smooth.
    pub fn pattern(&self, x: &Tensor, action: Option<usize>, into: &mut Vec<usize>) {
        let c = self.forward(x);
        for z in c.pre.iter().flatten() {
            into.push(usize::from(*z > R::of(0.0)));
        }
        if action.is_none() && c.out.len() > 1 {
            into.push(argmax(&c.out));
        }
    }

    pub fn scalar(&self, x: &Tensor) -> R {
        let c = self.forward(x);
        self.select(&c.out, None).0
    }

    pub fn loss_grad(&self, s: &LossSample) -> Vec<R> {
        let c = self.forward(&s.x);
        let dout = match s.target {
            LossTarget::HalfSquared(y) | LossTarget::Squared(y) => {
                let (f, df) = self.select(&c.out, s.action);
                let mut k = f - R::of(y);
                if matches!(s.target, LossTarget::Squared(_)) {
                    k = k * R::of(2.0);
                }
                df.into_iter().map(|v| v * k).collect()
            }
            LossTarget::CrossEntropy(label) => {
                let mut p = softmax(&c.out);
                p[label] = p[label] - R::of(1.0);
                p
            }
        };
        self.backward(&c, dout)
    }
}
