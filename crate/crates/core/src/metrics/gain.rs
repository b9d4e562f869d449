//! Pointwise loss change around an update sample.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use tdi_autodiff::ParamVector;

use super::interference::cosine;
use crate::error::{CoreError, Result};
use crate::learners::{BufferLearner, Learner};

pub fn default_offsets() -> Vec<i64> {
    (-30..=30).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub offsets: Vec<i64>,
    /// Mean of `J_θ′ − J_θ` over update samples; `None` with no data.
    pub mean_gain: Vec<Option<f64>>,
    pub counts: Vec<usize>,
}

impl GainCurve {
    /// Average per-update curves, skipping missing entries.
    pub fn mean_of(offsets: &[i64], curves: &[Vec<Option<f64>>]) -> Self {
        let mut sums = vec![0.0; offsets.len()];
        let mut counts = vec![0usize; offsets.len()];
        for c in curves {
            for (k, v) in c.iter().enumerate() {
                if let Some(v) = v {
                    sums[k] += v;
                    counts[k] += 1;
                }
            }
        }
        GainCurve {
            offsets: offsets.to_vec(),
            mean_gain: sums
                .iter()
                .zip(&counts)
                .map(|(s, &c)| (c > 0).then(|| s / c as f64))
                .collect(),
            counts,
        }
    }

    pub fn at(&self, offset: i64) -> Option<f64> {
        self.offsets.iter().position(|&o| o == offset).and_then(|k| self.mean_gain[k])
    }
}

/// `J_after(t+k) − J_before(t+k)` for each offset, `None` outside `range`.
pub fn gain_curve_from(
    before: &ParamVector,
    after: &ParamVector,
    t: usize,
    range: Range<usize>,
    offsets: &[i64],
    mut loss: impl FnMut(&ParamVector, usize) -> Result<f64>,
) -> Result<Vec<Option<f64>>> {
    if !range.contains(&t) {
        return Err(CoreError::OutOfRange { index: t, len: range.end });
    }
    offsets
        .iter()
        .map(|&k| {
            let i = t as i64 + k;
            if i < range.start as i64 || i >= range.end as i64 {
                return Ok(None);
            }
            let i = i as usize;
            Ok(Some(loss(after, i)? - loss(before, i)?))
        })
        .collect()
}

/// Unhalved pointwise training loss with targets from the learner's rule.
pub fn pointwise_loss(learner: &mut BufferLearner, params: &ParamVector, i: usize) -> Result<f64> {
    let y = learner.targets_for(params, &[i])?;
    Ok(learner.batch_grad(params, &[i], &y)?.value)
}

/// Gain curve after one optimizer step on buffer index `t`; the learner is
/// left untouched. Neighbors stay within `t`'s trajectory.
pub fn td_gain_curve(learner: &mut BufferLearner, t: usize, offsets: &[i64]) -> Result<Vec<Option<f64>>> {
    let range = learner.buffer().trajectory_of(t)?;
    let before = learner.model().params().clone();
    let after = learner.trial_step(&[t])?;
    gain_curve_from(&before, &after, t, range, offsets, |p, i| pointwise_loss(learner, p, i))
}

/// Cosine between the training gradient at `t` and at each neighbor.
pub fn stiffness_curve(learner: &mut BufferLearner, t: usize, offsets: &[i64]) -> Result<Vec<Option<f64>>> {
    let range = learner.buffer().trajectory_of(t)?;
    let params = learner.model().params().clone();
    let g0 = learner.training_grad(&params, &[t])?.grad;
    offsets
        .iter()
        .map(|&k| {
            let i = t as i64 + k;
            if i < range.start as i64 || i >= range.end as i64 {
                return Ok(None);
            }
            let gi = learner.training_grad(&params, &[i as usize])?.grad;
            cosine(&g0, &gi)
        })
        .collect()
}
