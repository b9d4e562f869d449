//! Gradient inner products between pairs of examples.

use serde::{Deserialize, Serialize};
use tdi_autodiff::{ParamVector, Tensor};

use crate::error::{CoreError, Result};
use crate::models::ValueModel;
use crate::rng;
use crate::sample::{delta, function_grad, loss_grad, LossSample};

/// `ρ = ∇J(A)·∇J(B)`.
pub fn rho(model: &ValueModel, params: &ParamVector, a: &LossSample, b: &LossSample) -> Result<f64> {
    let ga = loss_grad(model, params, a)?.grad;
    let gb = loss_grad(model, params, b)?.grad;
    Ok(ga.dot(&gb)?)
}

/// `ρ̄ = ∇f(A)·∇f(B)` with `f` the scalarized output.
pub fn rho_bar(model: &ValueModel, params: &ParamVector, xa: &Tensor, xb: &Tensor) -> Result<f64> {
    let ga = function_grad(model, params, xa)?.grad;
    let gb = function_grad(model, params, xb)?.grad;
    Ok(ga.dot(&gb)?)
}

/// Cosine of two gradients, clamped to `[−1, 1]`; `None` if either is zero.
pub fn cosine(a: &ParamVector, b: &ParamVector) -> Result<Option<f64>> {
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Ok(None);
    }
    Ok(Some((a.dot(b)? / (na * nb)).clamp(-1.0, 1.0)))
}

/// Cosine similarity of the two loss gradients.
pub fn stiffness(model: &ValueModel, params: &ParamVector, a: &LossSample, b: &LossSample) -> Result<Option<f64>> {
    let ga = loss_grad(model, params, a)?.grad;
    let gb = loss_grad(model, params, b)?.grad;
    cosine(&ga, &gb)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterferenceRecord {
    pub checkpoint: usize,
    pub pair_a: usize,
    pub pair_b: usize,
    pub rho: f64,
    pub rho_bar: f64,
    pub stiffness: Option<f64>,
    pub delta_a: Option<f64>,
    pub delta_b: Option<f64>,
}

struct Measured {
    g: ParamVector,
    gf: ParamVector,
    delta: Option<f64>,
}

fn measure(model: &ValueModel, params: &ParamVector, s: &LossSample) -> Result<Measured> {
    Ok(Measured {
        g: loss_grad(model, params, s)?.grad,
        gf: function_grad(model, params, &s.x)?.grad,
        delta: delta(model, params, s)?,
    })
}

/// Every cross pair of two independent minibatches of `√n_pairs` samples.
/// `ids[i]` names `samples[i]` in the records.
pub fn pair_sample_metrics(
    model: &ValueModel,
    params: &ParamVector,
    samples: &[LossSample],
    ids: &[usize],
    n_pairs: usize,
    seed: u64,
    checkpoint: usize,
) -> Result<Vec<InterferenceRecord>> {
    let side = (n_pairs as f64).sqrt().round() as usize;
    if n_pairs == 0 || side * side != n_pairs {
        return Err(CoreError::InvalidArgument(format!("{n_pairs} pairs is not a positive square")));
    }
    if ids.len() != samples.len() {
        return Err(CoreError::InvalidArgument("ids and samples must align".into()));
    }
    if samples.len() < side {
        return Err(CoreError::InsufficientData(format!(
            "{} samples for minibatches of {side}",
            samples.len()
        )));
    }
    let mut r = rng::stream(seed, "pair-metrics");
    let ia = rand::seq::index::sample(&mut r, samples.len(), side).into_vec();
    let ib = rand::seq::index::sample(&mut r, samples.len(), side).into_vec();
    let ma: Vec<Measured> = ia.iter().map(|&i| measure(model, params, &samples[i])).collect::<Result<_>>()?;
    let mb: Vec<Measured> = ib.iter().map(|&i| measure(model, params, &samples[i])).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(n_pairs);
    for (a, &i) in ma.iter().zip(&ia) {
        for (b, &j) in mb.iter().zip(&ib) {
            out.push(InterferenceRecord {
                checkpoint,
                pair_a: ids[i],
                pair_b: ids[j],
                rho: a.g.dot(&b.g)?,
                rho_bar: a.gf.dot(&b.gf)?,
                stiffness: cosine(&a.g, &b.g)?,
                delta_a: a.delta,
                delta_b: b.delta,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;
    use tdi_autodiff::Layout;

    fn pv(v: &[f64]) -> ParamVector {
        let mut l = Layout::new();
        l.push("p", vec![v.len()]);
        ParamVector::from_data(Arc::new(l), v.to_vec()).unwrap()
    }

    #[test]
    fn cosine_cases() {
        let c = cosine(&pv(&[1.0, 0.0]), &pv(&[1.0, 1.0])).unwrap().unwrap();
        assert!((c - 0.5f64.sqrt()).abs() < 1e-15);
        let anti = cosine(&pv(&[1.0, 2.0]), &pv(&[-1.0, -2.0])).unwrap().unwrap();
        assert!((anti + 1.0).abs() < 1e-15);
        assert_eq!(cosine(&pv(&[0.0, 0.0]), &pv(&[1.0, 1.0])).unwrap(), None);
    }
}
