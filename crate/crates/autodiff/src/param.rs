//! Flat parameter vectors with a named segment table.

use std::sync::Arc;

use crate::error::{AdError, Result};
use crate::tensor::{numel, Tensor};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segment {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl Segment {
    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered segment table: parameter-group name → (offset, shape).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Layout {
    segments: Vec<Segment>,
    len: usize,
}

impl Layout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a segment; returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let seg = Segment {
            name: name.into(),
            offset: self.len,
            shape,
        };
        self.len += seg.len();
        self.segments.push(seg);
        self.segments.len() - 1
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    /// Total number of scalar parameters.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Flattened view of every model parameter.
#[derive(Clone, Debug)]
pub struct ParamVector {
    layout: Arc<Layout>,
    data: Vec<f64>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.data == other.data
    }
}

impl ParamVector {
    pub fn zeros(layout: Arc<Layout>) -> Self {
        let data = vec![0.0; layout.len()];
        ParamVector { layout, data }
    }

    pub fn from_data(layout: Arc<Layout>, data: Vec<f64>) -> Result<Self> {
        if data.len() != layout.len() {
            return Err(AdError::LayoutMismatch);
        }
        Ok(ParamVector { layout, data })
    }

    pub fn layout(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    fn check(&self, other: &ParamVector) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(AdError::LayoutMismatch)
        }
    }

    pub fn segment(&self, i: usize) -> &[f64] {
        &self.data[self.layout.segment(i).range()]
    }

    pub fn segment_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.layout.segment(i).range();
        &mut self.data[r]
    }

    /// Segment `i` as a tensor with its declared shape.
    pub fn segment_tensor(&self, i: usize) -> Tensor {
        let seg = self.layout.segment(i);
        Tensor::from_parts(seg.shape.clone(), self.data[seg.range()].to_vec())
    }

    /// Σ aᵢbᵢ; layouts must be identical.
    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// self += alpha · other
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) -> Result<()> {
        self.check(other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> ParamVector {
        ParamVector {
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }

    /// self + alpha · other, as a new vector.
    pub fn plus(&self, alpha: f64, other: &ParamVector) -> Result<ParamVector> {
        let mut out = self.clone();
        out.axpy(alpha, other)?;
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> Result<f64> {
        self.check(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// Normwise relative error `‖a−b‖∞ / max(‖a‖∞, ‖b‖∞)`; zero when both vanish.
pub fn max_relative_error(a: &ParamVector, b: &ParamVector) -> Result<f64> {
    if !a.same_layout(b) {
        return Err(AdError::LayoutMismatch);
    }
    let inf = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf(a.data()).max(inf(b.data()));
    let diff = a.max_abs_diff(b)?;
    Ok(if scale == 0.0 { diff } else { diff / scale })
}
