//! Regression and TD decompositions `ρ′ = −r₁ − r₂ − r₃`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tdi_autodiff::{ParamVector, Tensor};

use super::analytic::prediction_hvp;
use crate::env::Transition;
use crate::error::{CoreError, Result};
use crate::learners::TargetKind;
use crate::models::ValueModel;
use crate::sample::{prediction_grad, LossSample, LossTarget};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakdownKind {
    Reg,
    TdSelf,
    TdFrozen,
    TdEma,
}

impl BreakdownKind {
    pub fn name(&self) -> &'static str {
        match self {
            BreakdownKind::Reg => "reg",
            BreakdownKind::TdSelf => "td_self",
            BreakdownKind::TdFrozen => "td_frozen",
            BreakdownKind::TdEma => "td_ema",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoPrimeBreakdown {
    pub kind: BreakdownKind,
    pub pair_a: usize,
    pub pair_b: usize,
    pub delta_a: f64,
    pub delta_b: f64,
    pub rho_bar_ab: f64,
    pub rho_bar_bb: f64,
    /// `∇v(A′)·∇f_B`; `None` when the successor term is dropped or terminal.
    pub rho_bar_a2b: Option<f64>,
    pub rho_bar_b2b: Option<f64>,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub total: f64,
}

impl RhoPrimeBreakdown {
    pub fn with_ids(mut self, a: usize, b: usize) -> Self {
        self.pair_a = a;
        self.pair_b = b;
        self
    }
}

struct Parts {
    da: f64,
    db: f64,
    rab: f64,
    rbb: f64,
    curvature: f64,
}

/// Shared first- and second-order pieces for two predictions at `params`.
fn parts(
    model: &ValueModel,
    params: &ParamVector,
    xa: &Tensor,
    act_a: Option<usize>,
    ya: f64,
    xb: &Tensor,
    act_b: Option<usize>,
    yb: f64,
) -> Result<(Parts, ParamVector)> {
    let fb = prediction_grad(model, params, xb, act_b)?;
    let (fa_val, fa, ha_fb) = prediction_hvp(model, params, xa, act_a, &fb.grad)?;
    let (_, _, hb_fb) = prediction_hvp(model, params, xb, act_b, &fb.grad)?;
    let p = Parts {
        da: fa_val - ya,
        db: fb.value - yb,
        rab: fa.dot(&fb.grad)?,
        rbb: fb.grad.dot(&fb.grad)?,
        curvature: fb.grad.dot(&ha_fb)? + fa.dot(&hb_fb)?,
    };
    Ok((p, fb.grad))
}

fn assemble(kind: BreakdownKind, p: &Parts, r1_factor: f64, r2_factor: f64, r2_coef: f64) -> RhoPrimeBreakdown {
    let r1 = p.db * p.db * p.rab * r1_factor;
    let r2 = r2_coef * (p.da * p.db * p.rab * r2_factor);
    let r3 = p.da * p.db * p.db * p.curvature;
    RhoPrimeBreakdown {
        kind,
        pair_a: 0,
        pair_b: 0,
        delta_a: p.da,
        delta_b: p.db,
        rho_bar_ab: p.rab,
        rho_bar_bb: p.rbb,
        rho_bar_a2b: None,
        rho_bar_b2b: None,
        r1,
        r2,
        r3,
        total: -(r1 + r2 + r3),
    }
}

fn regression_target(s: &LossSample) -> Result<f64> {
    match s.target {
        LossTarget::HalfSquared(y) => Ok(y),
        _ => Err(CoreError::InvalidArgument(
            "the regression breakdown needs a half-squared loss".into(),
        )),
    }
}

/// `r₁ = δ_B²ρ̄_AB²`, `r₂ = δ_Aδ_Bρ̄_ABρ̄_BB`,
/// `r₃ = δ_Aδ_B²(∇f_BᵀH̄_A∇f_B + ∇f_AᵀH̄_B∇f_B)` for `J = ½δ²`.
pub fn rho_prime_reg_terms(
    model: &ValueModel,
    params: &ParamVector,
    a: &LossSample,
    b: &LossSample,
) -> Result<RhoPrimeBreakdown> {
    rho_prime_reg_terms_with_r2_coefficient(model, params, a, b, 1.0)
}

/// Test hook: scales `r₂` by an arbitrary coefficient.
#[doc(hidden)]
pub fn rho_prime_reg_terms_with_r2_coefficient(
    model: &ValueModel,
    params: &ParamVector,
    a: &LossSample,
    b: &LossSample,
    coefficient: f64,
) -> Result<RhoPrimeBreakdown> {
    let (ya, yb) = (regression_target(a)?, regression_target(b)?);
    let (p, _) = parts(model, params, &a.x, a.action, ya, &b.x, b.action, yb)?;
    Ok(assemble(BreakdownKind::Reg, &p, p.rab, p.rbb, coefficient))
}

/// A transition as seen by the TD breakdown.
#[derive(Clone, Debug, PartialEq)]
pub struct TdSample {
    pub x: Arc<Tensor>,
    pub action: Option<usize>,
    pub reward: f64,
    pub next_x: Option<Arc<Tensor>>,
    pub done: bool,
}

impl TdSample {
    /// Keeps the action only for multi-output models.
    pub fn from_transition(model: &ValueModel, t: &Transition) -> Self {
        TdSample {
            x: t.state.x.clone(),
            action: (model.spec().outputs > 1).then_some(t.action),
            reward: t.reward,
            next_x: Some(t.next_state.x.clone()),
            done: t.done,
        }
    }

    fn successor(&self) -> Result<Option<&Arc<Tensor>>> {
        if self.done {
            return Ok(None);
        }
        self.next_x
            .as_ref()
            .map(Some)
            .ok_or(CoreError::InvalidArgument("non-terminal transition without a successor".into()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaSource {
    /// Bootstrap values from the target rule's parameters.
    #[default]
    Shadow,
    Online,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TdOptions {
    pub gamma: f64,
    pub target: TargetKind,
    /// EMA only: keep the successor terms scaled by τ.
    pub tau_coupling: bool,
    pub delta_source: DeltaSource,
}

impl TdOptions {
    pub fn new(gamma: f64, target: TargetKind) -> Self {
        TdOptions {
            gamma,
            target,
            tau_coupling: false,
            delta_source: DeltaSource::Shadow,
        }
    }

    /// Weight of the successor-sensitivity terms.
    pub fn coupling(&self) -> f64 {
        match self.target {
            TargetKind::Online => 1.0,
            TargetKind::Frozen { .. } => 0.0,
            TargetKind::Ema { tau } => {
                if self.tau_coupling {
                    tau
                } else {
                    0.0
                }
            }
        }
    }

    pub fn kind(&self) -> BreakdownKind {
        match self.target {
            TargetKind::Online => BreakdownKind::TdSelf,
            TargetKind::Frozen { .. } => BreakdownKind::TdFrozen,
            TargetKind::Ema { .. } => BreakdownKind::TdEma,
        }
    }

    /// Parameters used for bootstrap values inside δ.
    pub fn delta_params<'a>(&self, online: &'a ParamVector, shadow: &'a ParamVector) -> &'a ParamVector {
        match (self.target, self.delta_source) {
            (TargetKind::Online, _) | (_, DeltaSource::Online) => online,
            _ => shadow,
        }
    }

    /// Parameters whose successor gradients enter `r₁`/`r₂`.
    pub fn successor_params<'a>(&self, online: &'a ParamVector, shadow: &'a ParamVector) -> &'a ParamVector {
        match self.target {
            TargetKind::Online => online,
            _ => shadow,
        }
    }
}

/// Scalarized bootstrap value `v(s′)`.
pub(crate) fn bootstrap_value(model: &ValueModel, params: &ParamVector, next: Option<&Arc<Tensor>>) -> Result<f64> {
    match next {
        None => Ok(0.0),
        Some(x) => Ok(model.scalar_outputs_with(params, &model.single(x)?)?[0]),
    }
}

/// `r₁ = δ_B²ρ̄_AB(ρ̄_AB − cγρ̄_{A′B})`, `r₂ = δ_Aδ_Bρ̄_AB(ρ̄_BB − cγρ̄_{B′B})`,
/// `r₃` as in the regression case, with `c = 1` for a self target, 0 for a
/// frozen one and `τ` (or 0) for an EMA shadow.
pub fn rho_prime_td_terms(
    model: &ValueModel,
    online: &ParamVector,
    shadow: &ParamVector,
    a: &TdSample,
    b: &TdSample,
    opts: &TdOptions,
) -> Result<RhoPrimeBreakdown> {
    if !(0.0..=1.0).contains(&opts.gamma) {
        return Err(CoreError::InvalidArgument(format!("discount {} outside [0, 1]", opts.gamma)));
    }
    let (na, nb) = (a.successor()?, b.successor()?);
    let dp = opts.delta_params(online, shadow);
    let ya = a.reward + opts.gamma * bootstrap_value(model, dp, na)?;
    let yb = b.reward + opts.gamma * bootstrap_value(model, dp, nb)?;
    let (p, fb) = parts(model, online, &a.x, a.action, ya, &b.x, b.action, yb)?;
    let c = opts.coupling();
    let sp = opts.successor_params(online, shadow);
    let succ = |n: Option<&Arc<Tensor>>| -> Result<Option<f64>> {
        match n {
            Some(x) if c != 0.0 => Ok(Some(prediction_grad(model, sp, x, None)?.grad.dot(&fb)?)),
            _ => Ok(None),
        }
    };
    let a2b = succ(na)?;
    let b2b = succ(nb)?;
    let cg = c * opts.gamma;
    let f1 = p.rab - cg * a2b.unwrap_or(0.0);
    let f2 = p.rbb - cg * b2b.unwrap_or(0.0);
    let mut out = assemble(opts.kind(), &p, f1, f2, 1.0);
    out.rho_bar_a2b = a2b;
    out.rho_bar_b2b = b2b;
    Ok(out)
}
