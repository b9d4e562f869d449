//! ρ′ and ρ̄′ from Hessian-vector products, plus the Hessian-free form.

use tdi_autodiff::{GradProgram, HvpProgram, ParamVector, Tensor};

use crate::error::Result;
use crate::models::ValueModel;
use crate::sample::{batched_shape, loss_grad, loss_node, prediction_node, LossSample};

/// `(J, ∇J, H·v)` for one example's loss.
pub fn loss_hvp(
    model: &ValueModel,
    params: &ParamVector,
    s: &LossSample,
    v: &ParamVector,
) -> Result<(f64, ParamVector, ParamVector)> {
    let mut g = model.empty_graph();
    let x = g.input(&batched_shape(model));
    let j = loss_node(model, &mut g, x, s)?;
    let xb = model.single(&s.x)?;
    Ok(HvpProgram::new(&g, j)?.run_full(params, &[&xb], v)?)
}

/// `(f, ∇f, H̄·v)` for the prediction `f` (action-selected or scalarized).
pub fn prediction_hvp(
    model: &ValueModel,
    params: &ParamVector,
    x: &Tensor,
    action: Option<usize>,
    v: &ParamVector,
) -> Result<(f64, ParamVector, ParamVector)> {
    let mut g = model.empty_graph();
    let xi = g.input(&batched_shape(model));
    let out = model.build(&mut g, xi)?;
    let f = prediction_node(model, &mut g, out, action)?;
    let xb = model.single(x)?;
    Ok(HvpProgram::new(&g, f)?.run_full(params, &[&xb], v)?)
}

/// `ρ′ = −(∇J_Bᵀ H_A ∇J_B + ∇J_Aᵀ H_B ∇J_B)`: the rate of change of `ρ`
/// along an SGD step on `B`.
pub fn rho_prime_general(model: &ValueModel, params: &ParamVector, a: &LossSample, b: &LossSample) -> Result<f64> {
    let gb = loss_grad(model, params, b)?.grad;
    let (_, ga, ha_gb) = loss_hvp(model, params, a, &gb)?;
    let (_, _, hb_gb) = loss_hvp(model, params, b, &gb)?;
    Ok(-(gb.dot(&ha_gb)? + ga.dot(&hb_gb)?))
}

/// `−∇_θ(∇J_A·∇J_B)·∇J_B` by one double-backward pass over a graph holding
/// both examples.
pub fn hessian_free_rho_prime(model: &ValueModel, params: &ParamVector, a: &LossSample, b: &LossSample) -> Result<f64> {
    let mut g = model.empty_graph();
    let shape = batched_shape(model);
    let xa = g.input(&shape);
    let xb = g.input(&shape);
    let ja = loss_node(model, &mut g, xa, a)?;
    let jb = loss_node(model, &mut g, xb, b)?;
    let ga = g.param_gradients(ja)?;
    let gb = g.param_gradients(jb)?;
    let mut acc = None;
    for (p, q) in ga.iter().zip(&gb) {
        if let (Some(p), Some(q)) = (p, q) {
            let m = g.mul(*p, *q)?;
            let s = g.sum(m)?;
            acc = Some(match acc {
                None => s,
                Some(t) => g.add(t, s)?,
            });
        }
    }
    let Some(dot) = acc else {
        return Ok(0.0);
    };
    let ta = model.single(&a.x)?;
    let tb = model.single(&b.x)?;
    let d_dot = GradProgram::new(&g, dot)?.run(params, &[&ta, &tb])?.grad;
    let grad_b = loss_grad(model, params, b)?.grad;
    Ok(-d_dot.dot(&grad_b)?)
}

/// `ρ̄′ = −(∇f_Bᵀ H̄_A + ∇f_Aᵀ H̄_B)∇J_B`: function interference under the
/// same SGD step on `B`.
pub fn rho_bar_prime(model: &ValueModel, params: &ParamVector, a: &LossSample, b: &LossSample) -> Result<f64> {
    let gb = loss_grad(model, params, b)?.grad;
    let (_, fa, ha_gb) = prediction_hvp(model, params, &a.x, a.action, &gb)?;
    let (_, fb, hb_gb) = prediction_hvp(model, params, &b.x, b.action, &gb)?;
    Ok(-(fb.dot(&ha_gb)? + fa.dot(&hb_gb)?))
}
