//! Scalar statistics: sign variance, correlation, gaps, singular values.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use tdi_autodiff::Tensor;

use crate::error::{CoreError, Result};
use crate::rng;

pub const SIGN_WINDOW: usize = 5;

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Population variance of `sign(δ)` over every sliding window inside each
/// trajectory, averaged over windows. `None` when no full window exists.
pub fn sign_variance(trajectories: &[Vec<f64>], window: usize) -> Option<f64> {
    if window == 0 {
        return None;
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for traj in trajectories {
        let s: Vec<f64> = traj.iter().map(|&d| sign(d)).collect();
        for w in s.windows(window) {
            let mean = w.iter().sum::<f64>() / window as f64;
            total += w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / window as f64;
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

/// Pearson correlation; `None` for fewer than two points or zero variance.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Percentile bootstrap confidence interval for Pearson's r.
pub fn bootstrap_pearson_ci(xs: &[f64], ys: &[f64], resamples: usize, level: f64, seed: u64) -> Option<(f64, f64)> {
    pearson_r(xs, ys)?;
    let n = xs.len();
    let mut r = rng::stream(seed, "bootstrap");
    let mut stats = Vec::with_capacity(resamples);
    let (mut bx, mut by) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..resamples {
        for k in 0..n {
            let i = r.random_range(0..n);
            bx[k] = xs[i];
            by[k] = ys[i];
        }
        if let Some(v) = pearson_r(&bx, &by) {
            stats.push(v);
        }
    }
    if stats.is_empty() {
        return None;
    }
    stats.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (stats.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        stats[lo] + (pos - lo as f64) * (stats[hi] - stats[lo])
    };
    let tail = (1.0 - level) / 2.0;
    Some((q(tail), q(1.0 - tail)))
}

/// `(x − mean)/std` with population std; `None` on zero spread.
pub fn zscore(xs: &[f64]) -> Option<Vec<f64>> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt();
    (sd > 0.0).then(|| xs.iter().map(|x| (x - m) / sd).collect())
}

/// Least-squares slope and intercept.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapMetric {
    /// Lower is better: gap = test − train.
    Loss,
    /// Higher is better: gap = train − test.
    Accuracy,
    Return,
}

/// Positive means the model does better on the training split.
pub fn generalization_gap(train: &[f64], test: &[f64], metric: GapMetric) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(CoreError::InsufficientData("empty split".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(train), mean(test));
    Ok(match metric {
        GapMetric::Loss => b - a,
        GapMetric::Accuracy | GapMetric::Return => a - b,
    })
}

const JACOBI_SWEEPS: usize = 100;

/// Singular values of a matrix, descending, by one-sided Jacobi rotations.
pub fn singular_values(m: &Tensor) -> Result<Vec<f64>> {
    if m.rank() != 2 {
        return Err(CoreError::InvalidArgument(format!("expected a matrix, got shape {:?}", m.shape())));
    }
    let (r, c) = (m.shape()[0], m.shape()[1]);
    // columns of the taller orientation
    let (rows, cols) = if r >= c { (r, c) } else { (c, r) };
    let mut a: Vec<Vec<f64>> = (0..cols)
        .map(|j| {
            (0..rows)
                .map(|i| if r >= c { m.data()[i * c + j] } else { m.data()[j * c + i] })
                .collect()
        })
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>();
    for _ in 0..JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&a[p], &a[p]);
                let beta = dot(&a[q], &a[q]);
                let gamma = dot(&a[p], &a[q]);
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for i in 0..rows {
                    let (x, y) = (a[p][i], a[q][i]);
                    a[p][i] = cs * x - sn * y;
                    a[q][i] = sn * x + cs * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut s: Vec<f64> = a.iter().map(|col| dot(col, col).sqrt()).collect();
    s.sort_by(|x, y| y.total_cmp(x));
    Ok(s)
}
