//! Dense row-major `f64` tensors and the `TNSR` binary format.

use std::io::{Read, Write};

use crate::error::{AdError, Result};

/// Row-major dense tensor. A rank-0 tensor (empty shape) holds one scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    /// Validated constructor for external inputs: the data length must match
    /// the shape and every value must be finite.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected = numel(&shape);
        if expected != data.len() {
            return Err(AdError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(AdError::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// Constructor for computed values; only the length is checked.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// 1-D tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    /// 2-D tensor from rows; panics on ragged input.
    pub fn matrix(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let k = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(n * k);
        for r in rows {
            assert_eq!(r.len(), k, "ragged matrix rows");
            data.extend_from_slice(r);
        }
        Tensor {
            shape: vec![n, k],
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    /// Element (r, c) of a 2-D tensor.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.rank(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let k = self.shape[1..].iter().product::<usize>();
        &self.data[r * k..(r + 1) * k]
    }

    /// Validity check: true when no NaN or infinity has propagated into the data.
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(AdError::DataLength {
                shape,
                expected: self.data.len(),
                got: self.data.len(),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Self> {
        let first = items.first().ok_or(AdError::EmptyBatch)?;
        let mut data = Vec::with_capacity(first.len() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(AdError::Shape {
                    node: 0,
                    op: "stack",
                    detail: format!("{:?} vs {:?}", t.shape, first.shape),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Tensor { shape, data })
    }

    /// Prepend a unit batch axis.
    pub fn unsqueeze0(&self) -> Tensor {
        let mut shape = vec![1];
        shape.extend_from_slice(&self.shape);
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }
}

const MAGIC: &[u8; 4] = b"TNSR";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// Write `t` as: magic `TNSR`, u32 version, u8 dtype, u8 rank, rank×u64 dims,
/// row-major payload; all little-endian.
pub fn write_tnsr<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    if t.rank() > u8::MAX as usize {
        return Err(AdError::Format(format!("rank {} too large", t.rank())));
    }
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[DTYPE_F64, t.rank() as u8])?;
    for &d in &t.shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.len() * 8);
    for v in &t.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tnsr<R: Read>(mut r: R) -> Result<Tensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(AdError::Format("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(AdError::Format(format!("unsupported version {version}")));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    if head[0] != DTYPE_F64 {
        return Err(AdError::Format(format!("unsupported dtype {}", head[0])));
    }
    let rank = head[1] as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut u64buf = [0u8; 8];
    for _ in 0..rank {
        r.read_exact(&mut u64buf)?;
        shape.push(u64::from_le_bytes(u64buf) as usize);
    }
    let n = numel(&shape);
    let mut payload = vec![0u8; n * 8];
    r.read_exact(&mut payload)?;
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Tensor::from_parts(shape, data))
}
