//! Dense kernels behind each graph op. Shapes are validated at graph
//! construction, so these only debug-assert.

use crate::tensor::Tensor;

pub(crate) fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect())
}

pub(crate) fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    debug_assert_eq!(a.shape(), b.shape());
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    )
}

pub(crate) fn matmul(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let m = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::from_parts(vec![n, m], out)
}

pub(crate) fn transpose(a: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let d = a.data();
    let mut out = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            out[j * n + i] = d[i * k + j];
        }
    }
    Tensor::from_parts(vec![k, n], out)
}

pub(crate) fn log_softmax(a: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let mut out = Vec::with_capacity(n * k);
    for r in 0..n {
        let row = &a.data()[r * k..(r + 1) * k];
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        out.extend(row.iter().map(|x| x - lse));
    }
    Tensor::from_parts(vec![n, k], out)
}

pub(crate) fn sum_rows(a: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let mut out = vec![0.0; k];
    for r in 0..n {
        for (o, x) in out.iter_mut().zip(&a.data()[r * k..(r + 1) * k]) {
            *o += x;
        }
    }
    Tensor::from_parts(vec![k], out)
}

pub(crate) fn broadcast_rows(a: &Tensor, n: usize) -> Tensor {
    let k = a.len();
    let mut out = Vec::with_capacity(n * k);
    for _ in 0..n {
        out.extend_from_slice(a.data());
    }
    Tensor::from_parts(vec![n, k], out)
}

pub(crate) fn row_sum(a: &Tensor) -> Tensor {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    let out = (0..n)
        .map(|r| a.data()[r * k..(r + 1) * k].iter().sum())
        .collect();
    Tensor::from_parts(vec![n, 1], out)
}

pub(crate) fn broadcast_cols(a: &Tensor, k: usize) -> Tensor {
    let n = a.shape()[0];
    let mut out = Vec::with_capacity(n * k);
    for r in 0..n {
        out.extend(std::iter::repeat_n(a.data()[r], k));
    }
    Tensor::from_parts(vec![n, k], out)
}

/// First index of the maximum in each row of a `[n, k]` tensor.
pub(crate) fn argmax_rows(a: &Tensor) -> Vec<usize> {
    let (n, k) = (a.shape()[0], a.shape()[1]);
    (0..n)
        .map(|r| {
            let row = &a.data()[r * k..(r + 1) * k];
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

pub(crate) fn pick(a: &Tensor, cols: &[usize]) -> Tensor {
    let k = a.shape()[1];
    let out = cols
        .iter()
        .enumerate()
        .map(|(r, &c)| a.data()[r * k + c])
        .collect();
    Tensor::from_parts(vec![cols.len(), 1], out)
}

pub(crate) fn scatter(a: &Tensor, cols: &[usize], k: usize) -> Tensor {
    let n = cols.len();
    let mut out = vec![0.0; n * k];
    for (r, &c) in cols.iter().enumerate() {
        out[r * k + c] = a.data()[r];
    }
    Tensor::from_parts(vec![n, k], out)
}

pub(crate) fn conv_out_hw(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    if kh > hp || kw > wp || stride == 0 {
        return None;
    }
    Some(((hp - kh) / stride + 1, (wp - kw) / stride + 1))
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvDims {
    fn new(x: &[usize], wt: &[usize], stride: usize, pad: usize) -> Self {
        let (oh, ow) = conv_out_hw(x[2], x[3], wt[2], wt[3], stride, pad).expect("validated");
        ConvDims {
            n: x[0],
            c: x[1],
            h: x[2],
            w: x[3],
            o: wt[0],
            kh: wt[2],
            kw: wt[3],
            oh,
            ow,
        }
    }

    /// Visit every (input index, weight index, output index) triple that
    /// contributes to the convolution.
    fn for_each(&self, stride: usize, pad: usize, mut f: impl FnMut(usize, usize, usize)) {
        let d = self;
        for b in 0..d.n {
            for oc in 0..d.o {
                for oy in 0..d.oh {
                    for ox in 0..d.ow {
                        let yi = ((b * d.o + oc) * d.oh + oy) * d.ow + ox;
                        for ic in 0..d.c {
                            for ky in 0..d.kh {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                if iy < 0 || iy as usize >= d.h {
                                    continue;
                                }
                                for kx in 0..d.kw {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix < 0 || ix as usize >= d.w {
                                        continue;
                                    }
                                    let xi = ((b * d.c + ic) * d.h + iy as usize) * d.w + ix as usize;
                                    let wi = ((oc * d.c + ic) * d.kh + ky) * d.kw + kx;
                                    f(xi, wi, yi);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Tensor {
    let d = ConvDims::new(x.shape(), w.shape(), stride, pad);
    let mut out = vec![0.0; d.n * d.o * d.oh * d.ow];
    let (xd, wd) = (x.data(), w.data());
    d.for_each(stride, pad, |xi, wi, yi| out[yi] += xd[xi] * wd[wi]);
    Tensor::from_parts(vec![d.n, d.o, d.oh, d.ow], out)
}

pub(crate) fn conv2d_input_grad(
    g: &Tensor,
    w: &Tensor,
    stride: usize,
    pad: usize,
    in_shape: &[usize],
) -> Tensor {
    let d = ConvDims::new(in_shape, w.shape(), stride, pad);
    let mut out = vec![0.0; in_shape.iter().product()];
    let (gd, wd) = (g.data(), w.data());
    d.for_each(stride, pad, |xi, wi, yi| out[xi] += gd[yi] * wd[wi]);
    Tensor::from_parts(in_shape.to_vec(), out)
}

pub(crate) fn conv2d_weight_grad(
    x: &Tensor,
    g: &Tensor,
    stride: usize,
    pad: usize,
    w_shape: &[usize],
) -> Tensor {
    let d = ConvDims::new(x.shape(), w_shape, stride, pad);
    let mut out = vec![0.0; w_shape.iter().product()];
    let (xd, gd) = (x.data(), g.data());
    d.for_each(stride, pad, |xi, wi, yi| out[wi] += xd[xi] * gd[yi]);
    Tensor::from_parts(w_shape.to_vec(), out)
}

pub(crate) fn sum_channels(a: &Tensor) -> Tensor {
    let s = a.shape();
    let (n, c, hw) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; c];
    for b in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            let start = (b * c + ch) * hw;
            *o += a.data()[start..start + hw].iter().sum::<f64>();
        }
    }
    Tensor::from_parts(vec![c], out)
}

pub(crate) fn broadcast_channels(a: &Tensor, shape: &[usize]) -> Tensor {
    let (n, c, hw) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut out = Vec::with_capacity(n * c * hw);
    for _ in 0..n {
        for ch in 0..c {
            out.extend(std::iter::repeat_n(a.data()[ch], hw));
        }
    }
    Tensor::from_parts(shape.to_vec(), out)
}
