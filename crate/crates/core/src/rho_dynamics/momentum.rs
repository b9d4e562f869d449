//! Interference under momentum SGD.

use serde::Serialize;
use tdi_autodiff::ParamVector;

use super::analytic::loss_hvp;
use crate::error::{CoreError, Result};
use crate::models::ValueModel;
use crate::sample::{loss_grad, LossSample};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MomentumInterference {
    pub beta: f64,
    #[serde(skip)]
    pub mu: ParamVector,
    /// `(1−β)∇J_A·∇J_B + β∇J_A·μ`.
    pub rho_mu: f64,
    /// `(1−β)ρ′ − β∇J_BᵀH_Aμ`: change of `ρ_μ` along an SGD step on `B`.
    pub rho_prime_mu: f64,
    /// Change of `ρ_μ` along the momentum step `d = βμ + (1−β)∇J_B`:
    /// `−dᵀH_Ad − (1−β)∇J_AᵀH_Bd`.
    pub rho_prime_mu_exact: f64,
}

/// `ρ_μ = ∇J_A·((1−β)∇J_B + βμ)` at fixed parameters.
pub fn rho_mu(model: &ValueModel, params: &ParamVector, a: &LossSample, b: &LossSample, mu: &ParamVector, beta: f64) -> Result<f64> {
    let ga = loss_grad(model, params, a)?.grad;
    let gb = loss_grad(model, params, b)?.grad;
    Ok((1.0 - beta) * ga.dot(&gb)? + beta * ga.dot(mu)?)
}

/// The direction `d` with `θ′ = θ − αd` for a momentum step on `B`.
pub fn momentum_direction(gb: &ParamVector, mu: &ParamVector, beta: f64) -> Result<ParamVector> {
    Ok(mu.scaled(beta).plus(1.0 - beta, gb)?)
}

pub fn momentum_interference(
    model: &ValueModel,
    params: &ParamVector,
    a: &LossSample,
    b: &LossSample,
    mu: &ParamVector,
    beta: f64,
) -> Result<MomentumInterference> {
    if !(0.0..1.0).contains(&beta) {
        return Err(CoreError::InvalidArgument(format!("β = {beta} outside [0, 1)")));
    }
    if !mu.same_layout(params) {
        return Err(CoreError::InvalidArgument("momentum buffer layout differs from parameters".into()));
    }
    let gb = loss_grad(model, params, b)?.grad;
    let (_, ga, ha_gb) = loss_hvp(model, params, a, &gb)?;
    let (_, _, hb_gb) = loss_hvp(model, params, b, &gb)?;
    let (_, _, ha_mu) = loss_hvp(model, params, a, mu)?;
    let rho = ga.dot(&gb)?;
    let rho_prime = -(gb.dot(&ha_gb)? + ga.dot(&hb_gb)?);
    let d = momentum_direction(&gb, mu, beta)?;
    let (_, _, ha_d) = loss_hvp(model, params, a, &d)?;
    let (_, _, hb_d) = loss_hvp(model, params, b, &d)?;
    Ok(MomentumInterference {
        beta,
        mu: mu.clone(),
        rho_mu: (1.0 - beta) * rho + beta * ga.dot(mu)?,
        rho_prime_mu: (1.0 - beta) * rho_prime - beta * gb.dot(&ha_mu)?,
        rho_prime_mu_exact: -d.dot(&ha_d)? - (1.0 - beta) * ga.dot(&hb_d)?,
    })
}
