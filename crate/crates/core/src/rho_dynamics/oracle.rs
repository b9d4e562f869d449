//! Finite-difference adjudication of the analytic ρ′ forms.

use serde::{Deserialize, Serialize};
use tdi_autodiff::ParamVector;
use twofloat::TwoFloat;

use super::analytic::{hessian_free_rho_prime, loss_hvp, prediction_hvp, rho_bar_prime, rho_prime_general};
use super::momentum::{momentum_direction, momentum_interference, rho_mu};
use super::precise::{self, dot, stepped, Net, Real};
use super::terms::{
    bootstrap_value, rho_prime_reg_terms_with_r2_coefficient, rho_prime_td_terms, TdOptions, TdSample,
};
use crate::error::{CoreError, Result};
use crate::learners::TargetKind;
use crate::models::ValueModel;
use crate::sample::{loss_grad, prediction_grad, LossSample};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdEntry {
    pub alpha: f64,
    /// `(ρ(θ − α·d) − ρ(θ))/α`.
    pub slope: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdReport {
    pub analytic: f64,
    /// Normwise magnitude: the sum of the absolute contributions to the
    /// analytic value, never below `|analytic|`.
    pub scale: f64,
    pub entries: Vec<FdEntry>,
    /// Whether an activation or argmax switches between `θ` and some probed
    /// point, which invalidates the forward difference; `None` if unchecked.
    pub kink_crossed: Option<bool>,
}

/// Residuals below this fraction of the scale are at working precision.
pub const FD_RESOLUTION: f64 = 1e-12;

impl FdReport {
    pub fn with_scale(mut self, magnitude: f64) -> Self {
        self.scale = self.analytic.abs().max(magnitude.abs());
        self
    }

    /// `|slope − analytic| / scale`, or the absolute residual when the scale
    /// is zero.
    pub fn relative_error(&self, i: usize) -> f64 {
        let r = self.entries[i].residual;
        if self.scale == 0.0 {
            r
        } else {
            r / self.scale
        }
    }

    /// `(res_i / res_{i+1}) / (α_i / α_{i+1})`; 1 for a first-order remainder.
    /// `None` when both residuals are at working precision, as happens when
    /// the quantity is linear along the step.
    pub fn scaling_ratio(&self, i: usize) -> Option<f64> {
        let (p, q) = (self.entries.get(i)?, self.entries.get(i + 1)?);
        let floor = FD_RESOLUTION * self.scale;
        if q.residual == 0.0 || (p.residual <= floor && q.residual <= floor) {
            return None;
        }
        Some((p.residual / q.residual) / (p.alpha / q.alpha))
    }

    /// Empirical convergence order from the first two step sizes.
    pub fn order(&self) -> Option<f64> {
        let (p, q) = (self.entries.first()?, self.entries.get(1)?);
        if p.residual == 0.0 || q.residual == 0.0 {
            return None;
        }
        Some((p.residual / q.residual).ln() / (p.alpha / q.alpha).ln())
    }

    pub fn at(&self, alpha: f64) -> Option<(usize, &FdEntry)> {
        self.entries.iter().enumerate().find(|(_, e)| e.alpha == alpha)
    }
}

fn check_alphas(alphas: &[f64]) -> Result<()> {
    if alphas.is_empty() || alphas.iter().any(|&a| !(a > 0.0)) || alphas.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CoreError::InvalidArgument("step sizes must be positive and descending".into()));
    }
    Ok(())
}

/// Forward-difference slopes of `quantity` along `θ − α·direction`.
pub fn fd_report(
    analytic: f64,
    alphas: &[f64],
    mut quantity: impl FnMut(f64) -> Result<f64>,
) -> Result<FdReport> {
    check_alphas(alphas)?;
    let base = quantity(0.0)?;
    fd_report_from_differences(analytic, alphas, |alpha| Ok(quantity(alpha)? - base))
}

/// As [`fd_report`], from precomputed differences `q(α) − q(0)`.
pub fn fd_report_from_differences(
    analytic: f64,
    alphas: &[f64],
    mut difference: impl FnMut(f64) -> Result<f64>,
) -> Result<FdReport> {
    check_alphas(alphas)?;
    let entries = alphas
        .iter()
        .map(|&alpha| {
            let slope = difference(alpha)? / alpha;
            Ok(FdEntry {
                alpha,
                slope,
                residual: (slope - analytic).abs(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(FdReport {
        analytic,
        scale: analytic.abs(),
        entries,
        kink_crossed: None,
    })
}

/// What is differentiated and along which update.
#[derive(Clone, Debug)]
pub enum OracleObjective<'a> {
    /// `ρ` under an SGD step on `B`, analytic value from HVPs.
    General,
    /// Same, analytic value from the Hessian-free double backward.
    HessianFree,
    /// `ρ̄` under an SGD step on `B`.
    FunctionInterference,
    /// The regression breakdown total; `r2_coefficient` other than 1 is a
    /// deliberately wrong variant.
    Regression { r2_coefficient: f64 },
    /// `ρ_μ` under an SGD step on `B`.
    MomentumSgd { mu: &'a ParamVector, beta: f64 },
    /// `ρ_μ` under the momentum step itself.
    MomentumStep { mu: &'a ParamVector, beta: f64 },
}

impl OracleObjective<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            OracleObjective::General => "general",
            OracleObjective::HessianFree => "hessian_free",
            OracleObjective::FunctionInterference => "rho_bar",
            OracleObjective::Regression { .. } => "reg",
            OracleObjective::MomentumSgd { .. } => "momentum",
            OracleObjective::MomentumStep { .. } => "momentum_step",
        }
    }
}

/// A scalar probed along `θ − α·dir`.
enum Quantity<'a> {
    Rho(&'a LossSample, &'a LossSample),
    RhoBar(&'a LossSample, &'a LossSample),
    RhoMu {
        a: &'a LossSample,
        b: &'a LossSample,
        mu: &'a ParamVector,
        beta: f64,
    },
    /// Bootstrap parameters are `boot − α·scale·dir`.
    Td {
        a: &'a TdSample,
        b: &'a TdSample,
        gamma: f64,
        boot: &'a ParamVector,
        scale: f64,
    },
}

struct Probe<'a> {
    model: &'a ValueModel,
    base: &'a ParamVector,
    dir: &'a ParamVector,
    quantity: Quantity<'a>,
}

impl Probe<'_> {
    /// Activation pattern of every forward pass the quantity makes.
    fn pattern(&self, alpha: f64) -> Result<Vec<usize>> {
        let m = self.model;
        let net = Net::<TwoFloat>::new(m, stepped(self.base, alpha, self.dir))?;
        let mut out = Vec::new();
        match &self.quantity {
            Quantity::Rho(a, b) | Quantity::RhoBar(a, b) | Quantity::RhoMu { a, b, .. } => {
                net.pattern(&a.x, a.action, &mut out);
                net.pattern(&b.x, b.action, &mut out);
            }
            Quantity::Td { a, b, boot, scale, .. } => {
                net.pattern(&a.x, a.action, &mut out);
                net.pattern(&b.x, b.action, &mut out);
                let bnet = Net::<TwoFloat>::new(m, stepped(boot, alpha * scale, self.dir))?;
                for s in [a, b] {
                    if let (Some(x), false) = (&s.next_x, s.done) {
                        bnet.pattern(x, None, &mut out);
                    }
                }
            }
        }
        Ok(out)
    }

    fn precise<R: Real>(&self, alpha: f64) -> Result<R> {
        let m = self.model;
        let net = Net::<R>::new(m, stepped(self.base, alpha, self.dir))?;
        Ok(match &self.quantity {
            Quantity::Rho(a, b) => dot(&net.loss_grad(a), &net.loss_grad(b)),
            Quantity::RhoBar(a, b) => dot(&net.prediction(&a.x, a.action).1, &net.prediction(&b.x, b.action).1),
            Quantity::RhoMu { a, b, mu, beta } => {
                let ga = net.loss_grad(a);
                let gb = net.loss_grad(b);
                let mu: Vec<R> = mu.data().iter().map(|&v| R::of(v)).collect();
                R::of(1.0 - beta) * dot(&ga, &gb) + R::of(*beta) * dot(&ga, &mu)
            }
            Quantity::Td { a, b, gamma, boot, scale } => {
                let bnet = Net::<R>::new(m, stepped(boot, alpha * scale, self.dir))?;
                let side = |s: &TdSample| -> Vec<R> {
                    let (f, g) = net.prediction(&s.x, s.action);
                    let next = match (&s.next_x, s.done) {
                        (Some(x), false) => bnet.scalar(x),
                        _ => R::of(0.0),
                    };
                    let d = f - R::of(s.reward) - R::of(*gamma) * next;
                    g.into_iter().map(|v| v * d).collect()
                };
                dot(&side(a), &side(b))
            }
        })
    }

    fn engine(&self, alpha: f64) -> Result<f64> {
        let m = self.model;
        let p = self.base.plus(-alpha, self.dir)?;
        match &self.quantity {
            Quantity::Rho(a, b) => Ok(loss_grad(m, &p, a)?.grad.dot(&loss_grad(m, &p, b)?.grad)?),
            Quantity::RhoBar(a, b) => {
                let fa = prediction_grad(m, &p, &a.x, a.action)?.grad;
                Ok(fa.dot(&prediction_grad(m, &p, &b.x, b.action)?.grad)?)
            }
            Quantity::RhoMu { a, b, mu, beta } => rho_mu(m, &p, a, b, mu, *beta),
            Quantity::Td { a, b, gamma, boot, scale } => {
                let bp = boot.plus(-alpha * scale, self.dir)?;
                let side = |s: &TdSample| -> Result<ParamVector> {
                    let f = prediction_grad(m, &p, &s.x, s.action)?;
                    let next = if s.done { None } else { s.next_x.as_ref() };
                    let y = s.reward + gamma * bootstrap_value(m, &bp, next)?;
                    Ok(f.grad.scaled(f.value - y))
                };
                Ok(side(a)?.dot(&side(b)?)?)
            }
        }
    }

    /// Forward-difference slopes; dense models are evaluated in
    /// double-double so the slope is free of cancellation.
    fn report(&self, analytic: f64, alphas: &[f64]) -> Result<FdReport> {
        if !precise::supports(self.model) {
            return fd_report(analytic, alphas, |alpha| self.engine(alpha));
        }
        let base: TwoFloat = self.precise(0.0)?;
        let mut rep =
            fd_report_from_differences(analytic, alphas, |alpha| Ok((self.precise::<TwoFloat>(alpha)? - base).value()))?;
        let p0 = self.pattern(0.0)?;
        let mut crossed = false;
        for &alpha in alphas {
            crossed |= self.pattern(alpha)? != p0;
        }
        rep.kink_crossed = Some(crossed);
        Ok(rep)
    }
}

/// Analytic rate of change against forward differences.
pub fn fd_oracle_rho_prime(
    model: &ValueModel,
    params: &ParamVector,
    objective: &OracleObjective<'_>,
    a: &LossSample,
    b: &LossSample,
    alphas: &[f64],
) -> Result<FdReport> {
    let gb = loss_grad(model, params, b)?.grad;
    let probe = |dir, quantity| Probe {
        model,
        base: params,
        dir,
        quantity,
    };
    // |v·H_A w| + |u·H_B w|.
    let loss_terms = |v: &ParamVector, u: &ParamVector, w: &ParamVector| -> Result<f64> {
        let (_, _, ha) = loss_hvp(model, params, a, w)?;
        let (_, _, hb) = loss_hvp(model, params, b, w)?;
        Ok(v.dot(&ha)?.abs() + u.dot(&hb)?.abs())
    };
    let ga = loss_grad(model, params, a)?.grad;
    match objective {
        OracleObjective::General | OracleObjective::HessianFree | OracleObjective::Regression { .. } => {
            let (analytic, scale) = match objective {
                OracleObjective::General => (rho_prime_general(model, params, a, b)?, loss_terms(&gb, &ga, &gb)?),
                OracleObjective::HessianFree => {
                    (hessian_free_rho_prime(model, params, a, b)?, loss_terms(&gb, &ga, &gb)?)
                }
                OracleObjective::Regression { r2_coefficient } => {
                    let t = rho_prime_reg_terms_with_r2_coefficient(model, params, a, b, *r2_coefficient)?;
                    (t.total, t.r1.abs() + t.r2.abs() + t.r3.abs())
                }
                _ => unreachable!(),
            };
            Ok(probe(&gb, Quantity::Rho(a, b)).report(analytic, alphas)?.with_scale(scale))
        }
        OracleObjective::FunctionInterference => {
            let (_, fa, ha) = prediction_hvp(model, params, &a.x, a.action, &gb)?;
            let (_, fb, hb) = prediction_hvp(model, params, &b.x, b.action, &gb)?;
            let scale = fb.dot(&ha)?.abs() + fa.dot(&hb)?.abs();
            let rep = probe(&gb, Quantity::RhoBar(a, b)).report(rho_bar_prime(model, params, a, b)?, alphas)?;
            Ok(rep.with_scale(scale))
        }
        OracleObjective::MomentumSgd { mu, beta } | OracleObjective::MomentumStep { mu, beta } => {
            let m = momentum_interference(model, params, a, b, mu, *beta)?;
            let quantity = Quantity::RhoMu { a, b, mu, beta: *beta };
            match objective {
                OracleObjective::MomentumSgd { .. } => {
                    let (_, _, ha_mu) = loss_hvp(model, params, a, mu)?;
                    let scale = (1.0 - beta) * loss_terms(&gb, &ga, &gb)? + beta * gb.dot(&ha_mu)?.abs();
                    Ok(probe(&gb, quantity).report(m.rho_prime_mu, alphas)?.with_scale(scale))
                }
                _ => {
                    let d = momentum_direction(&gb, mu, *beta)?;
                    let ga_scaled = ga.scaled(1.0 - beta);
                    let scale = loss_terms(&d, &ga_scaled, &d)?;
                    Ok(probe(&d, quantity).report(m.rho_prime_mu_exact, alphas)?.with_scale(scale))
                }
            }
        }
    }
}

/// TD semi-gradient interference `ρ = δ_Aδ_B∇f_A·∇f_B` under the training
/// step on `B`; bootstrap parameters follow the target rule during the step
/// (self: move with θ; frozen: fixed; coupled EMA: move by τ times the step).
pub fn fd_oracle_td(
    model: &ValueModel,
    params: &ParamVector,
    shadow: &ParamVector,
    a: &TdSample,
    b: &TdSample,
    opts: &TdOptions,
    alphas: &[f64],
) -> Result<FdReport> {
    let terms = rho_prime_td_terms(model, params, shadow, a, b, opts)?;
    let analytic = terms.total;
    let boot = opts.delta_params(params, shadow);
    let fb = prediction_grad(model, params, &b.x, b.action)?;
    let next_b = if b.done { None } else { b.next_x.as_ref() };
    let yb = b.reward + opts.gamma * bootstrap_value(model, boot, next_b)?;
    let gb = fb.grad.scaled(fb.value - yb);
    let scale = match opts.target {
        TargetKind::Online => 1.0,
        TargetKind::Ema { tau } if opts.tau_coupling => tau,
        _ => 0.0,
    };
    Probe {
        model,
        base: params,
        dir: &gb,
        quantity: Quantity::Td {
            a,
            b,
            gamma: opts.gamma,
            boot,
            scale,
        },
    }
    .report(analytic, alphas)
    .map(|r| r.with_scale(terms.r1.abs() + terms.r2.abs() + terms.r3.abs()))
}
