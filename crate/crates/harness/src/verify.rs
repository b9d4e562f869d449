//! Oracle and identity checks behind `tdi verify`. Every check carries its
//! measured value and tolerance; failures are results, not errors.

use std::sync::Arc;
use std::time::Instant;

use rand::Rng as _;
use serde::Serialize;
use tdi_autodiff::{finite_diff_grad, finite_diff_hvp, grad, hvp, max_relative_error, ParamVector, Tensor};
use tdi_core::env::{
    argmax, chain_mdp, chain_mdp_with, dp_policy_evaluation, make_expert_buffer, mc_return, mc_returns, rollout,
    value_iteration, ChainOptions, ChainRewards, Encoding, Policy, TabularMdp, Transition,
};
use tdi_core::learners::{lambda_returns, lambda_weights, tabular_td0, td0_target, ModelValue, TargetKind};
use tdi_core::metrics::{pearson_r, rho, rho_bar, sign_variance, singular_values};
use tdi_core::models::{Head, ModelSpec, ValueModel};
use tdi_core::rho_dynamics::{
    fd_oracle_rho_prime, fd_oracle_td, hessian_free_rho_prime, momentum_interference, rho_prime_general,
    rho_prime_reg_terms, rho_prime_td_terms, FdReport, OracleObjective, TdOptions, TdSample,
};
use tdi_core::rng;
use tdi_core::sample::{delta, loss_graph, LossSample, LossTarget};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Gradients,
    RhoPrime,
    Identities,
    Dp,
    Stats,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Gradients, Suite::RhoPrime, Suite::Identities, Suite::Dp, Suite::Stats];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Gradients => "gradients",
            Suite::RhoPrime => "rho_prime",
            Suite::Identities => "identities",
            Suite::Dp => "dp",
            Suite::Stats => "stats",
        }
    }
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    /// Random draws per oracle.
    pub draws: usize,
    /// Coefficient of the second regression term in the analytic `ρ′`.
    #[doc(hidden)]
    pub r2_coefficient: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            draws: 100,
            r2_coefficient: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seconds: f64,
    pub checks: Vec<Check>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub n_checks: usize,
    pub n_failed: usize,
    pub suites: Vec<SuiteReport>,
}

pub fn run_suite(suite: Suite, opts: &VerifyOptions) -> Result<SuiteReport> {
    let t0 = Instant::now();
    let checks = match suite {
        Suite::Gradients => gradients(opts)?,
        Suite::RhoPrime => rho_prime(opts)?,
        Suite::Identities => identities(opts)?,
        Suite::Dp => dp()?,
        Suite::Stats => stats()?,
    };
    Ok(SuiteReport {
        suite,
        seconds: t0.elapsed().as_secs_f64(),
        checks,
    })
}

pub fn verify(opts: &VerifyOptions) -> Result<VerifyReport> {
    let suites = Suite::ALL.iter().map(|s| run_suite(*s, opts)).collect::<Result<Vec<_>>>()?;
    let n_checks = suites.iter().map(|s| s.checks.len()).sum();
    let n_failed = suites.iter().flat_map(|s| &s.checks).filter(|c| !c.passed).count();
    Ok(VerifyReport {
        passed: n_failed == 0,
        n_checks,
        n_failed,
        suites,
    })
}

fn check(suite: Suite, name: &str, value: f64, tolerance: f64, passed: bool, detail: String) -> Check {
    Check {
        suite: suite.name(),
        name: name.to_string(),
        value,
        tolerance,
        passed: passed && !value.is_nan(),
        detail,
    }
}

/// `value < tolerance`.
fn below(suite: Suite, name: &str, value: f64, tolerance: f64, detail: String) -> Check {
    check(suite, name, value, tolerance, value < tolerance, detail)
}

fn random_vec(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn jitter(model: &ValueModel, r: &mut rng::Rng, scale: f64) -> ParamVector {
    let mut p = model.params().clone();
    let noise = random_vec(r, p.len());
    for (v, b) in p.data_mut().iter_mut().zip(noise) {
        *v += scale * b;
    }
    p
}

fn rel_close(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

// ---------------------------------------------------------------- gradients

fn gradient_case(seed: u64) -> Result<(ValueModel, ParamVector, LossSample)> {
    let mut r = rng::stream(seed, "verify-grad");
    let conv = seed % 10 == 9;
    let head = if seed % 3 == 0 { Head::Classifier } else { Head::Value };
    let outputs = r.random_range(1..4);
    let (spec, x) = if conv {
        let side = r.random_range(13..15);
        let spec = ModelSpec::conv([1, side, side], 2, 0, outputs, head);
        (spec, Tensor::new(vec![1, side, side], random_vec(&mut r, side * side))?)
    } else {
        let d = r.random_range(2..6);
        let spec = ModelSpec::mlp(d, r.random_range(3..8), r.random_range(0..3), outputs, head);
        (spec, Tensor::vector(random_vec(&mut r, d)))
    };
    let model = ValueModel::init(&spec, seed)?;
    let params = jitter(&model, &mut r, 0.2);
    let target = match seed % 3 {
        0 if outputs > 1 => LossTarget::CrossEntropy(r.random_range(0..outputs)),
        1 => LossTarget::Squared(r.random_range(-1.0..1.0)),
        _ => LossTarget::HalfSquared(r.random_range(-1.0..1.0)),
    };
    let action = (outputs > 1 && !matches!(target, LossTarget::CrossEntropy(_))).then(|| r.random_range(0..outputs));
    Ok((model, params, LossSample { x: Arc::new(x), action, target }))
}

fn gradients(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let s = Suite::Gradients;
    let (mut g_worst, mut h_worst, mut sym_worst) = (0.0f64, 0.0f64, 0.0f64);
    let n = opts.draws.max(1);
    for seed in 0..n as u64 {
        let (model, params, sample) = gradient_case(seed)?;
        let (g, out) = loss_graph(&model, &sample)?;
        let xin = model.single(&sample.x)?;
        let inputs = [&xin];
        let ad = grad(&g, out, &params, &inputs)?;
        let fd = finite_diff_grad(&g, out, &params, &inputs, 1e-5)?;
        g_worst = g_worst.max(max_relative_error(&ad.grad, &fd)?);
        let mut r = rng::stream(seed, "verify-hvp");
        let v = ParamVector::from_data(model.layout().clone(), random_vec(&mut r, params.len()))?;
        let u = ParamVector::from_data(model.layout().clone(), random_vec(&mut r, params.len()))?;
        let hv = hvp(&g, out, &params, &inputs, &v)?;
        let fd_hv = finite_diff_hvp(&g, out, &params, &inputs, &v, 1e-5)?;
        h_worst = h_worst.max(max_relative_error(&hv, &fd_hv)?);
        let hu = hvp(&g, out, &params, &inputs, &u)?;
        let (uhv, vhu) = (u.dot(&hv)?, v.dot(&hu)?);
        let scale = u.norm() * hv.norm() + v.norm() * hu.norm();
        if scale > 0.0 {
            sym_worst = sym_worst.max((uhv - vhu).abs() / scale);
        }
    }
    let detail = format!("{n} random MLP/conv models, central differences with h = 1e-5");
    Ok(vec![
        below(s, "gradient_vs_central_difference", g_worst, 1e-5, detail.clone()),
        below(s, "hvp_vs_central_difference", h_worst, 1e-5, detail),
        below(s, "hvp_symmetry", sym_worst, 1e-8, format!("|uᵀHv − vᵀHu| / (‖u‖‖Hv‖ + ‖v‖‖Hu‖) over {n} models")),
    ])
}

// ---------------------------------------------------------------- ρ′ oracles

const ALPHAS: [f64; 2] = [1e-5, 1e-6];

struct Draw {
    model: ValueModel,
    params: ParamVector,
    a: LossSample,
    b: LossSample,
}

fn draw(seed: u64, outputs: usize) -> Result<Draw> {
    let mut r = rng::stream(seed, "oracle-draw");
    let d = r.random_range(2..5);
    let spec = ModelSpec::mlp(d, r.random_range(3..7), r.random_range(0..2), outputs, Head::Value);
    let model = ValueModel::init(&spec, seed)?;
    let params = jitter(&model, &mut r, 0.2);
    let sample = |r: &mut rng::Rng| {
        let act = (outputs > 1).then(|| r.random_range(0..outputs));
        LossSample::half_squared(Arc::new(Tensor::vector(random_vec(r, d))), act, r.random_range(-1.0..1.0))
    };
    let a = sample(&mut r);
    let b = sample(&mut r);
    Ok(Draw { model, params, a, b })
}

fn td_pair(seed: u64, outputs: usize) -> Result<(Draw, ParamVector, TdSample, TdSample)> {
    let d = draw(seed, outputs)?;
    let mut r = rng::stream(seed, "td-pair");
    let noise = ParamVector::from_data(d.model.layout().clone(), random_vec(&mut r, d.params.len()))?;
    let shadow = d.params.plus(0.05, &noise)?;
    let dim = d.model.spec().input_shape[0];
    let mut mk = |s: &LossSample| TdSample {
        x: s.x.clone(),
        action: s.action,
        reward: r.random_range(-1.0..1.0),
        next_x: Some(Arc::new(Tensor::vector(random_vec(&mut r, dim)))),
        done: false,
    };
    let (a, b) = (mk(&d.a), mk(&d.b));
    Ok((d, shadow, a, b))
}

/// Smooth draws of one objective: worst relative error at α = 1e-6 and
/// residual-scaling violations.
#[derive(Default)]
struct Tally {
    checked: usize,
    kinked: usize,
    worst: f64,
    bad_scaling: usize,
}

impl Tally {
    fn record(&mut self, rep: &FdReport) {
        if rep.kink_crossed == Some(true) {
            self.kinked += 1;
            return;
        }
        let (i, _) = rep.at(1e-6).expect("α = 1e-6 probed");
        self.worst = self.worst.max(rep.relative_error(i));
        if let Some(ratio) = rep.scaling_ratio(0) {
            if !(0.3..=3.0).contains(&ratio) {
                self.bad_scaling += 1;
            }
        }
        self.checked += 1;
    }

    fn into_check(self, name: &str, draws: usize) -> Check {
        let passed = self.worst < 1e-3 && self.bad_scaling == 0 && self.checked >= draws && self.kinked * 20 <= draws;
        check(
            Suite::RhoPrime,
            name,
            self.worst,
            1e-3,
            passed,
            format!(
                "{} smooth draws at α = 1e-6, {} skipped across a kink, {} with non-first-order residual scaling",
                self.checked, self.kinked, self.bad_scaling
            ),
        )
    }
}

/// Feed seeds until every tally holds `draws` smooth draws, giving up after
/// a bounded number of kinked ones.
fn until_checked<const N: usize>(
    draws: usize,
    base: u64,
    mut body: impl FnMut(u64, &mut [Tally; N]) -> Result<()>,
) -> Result<[Tally; N]> {
    let mut t: [Tally; N] = std::array::from_fn(|_| Tally::default());
    let mut seed = base;
    while !t.iter().all(|x| x.checked >= draws) && t.iter().all(|x| x.kinked * 20 <= draws) {
        body(seed, &mut t)?;
        seed += 1;
    }
    Ok(t)
}

fn one_parameter(theta: f64) -> Result<(ValueModel, ParamVector, LossSample, LossSample)> {
    let m = ValueModel::init(&ModelSpec::linear(1, 1, Head::Value), 0)?;
    let p = ParamVector::from_data(m.layout().clone(), vec![theta])?;
    let s = |x: f64| LossSample::half_squared(Arc::new(Tensor::vector(vec![x])), None, 0.0);
    Ok((m, p, s(1.0), s(2.0)))
}

fn rho_prime(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let s = Suite::RhoPrime;
    let n = opts.draws.max(1);
    let mut out = Vec::new();

    let [general, free] = until_checked(n, 0, |seed, t: &mut [Tally; 2]| {
        let d = draw(seed, 1 + (seed % 2) as usize)?;
        for (obj, t) in [OracleObjective::General, OracleObjective::HessianFree].iter().zip(t) {
            t.record(&fd_oracle_rho_prime(&d.model, &d.params, obj, &d.a, &d.b, &ALPHAS)?);
        }
        Ok(())
    })?;
    out.push(general.into_check("general", n));
    out.push(free.into_check("hessian_free", n));

    let [rb] = until_checked(n, 1000, |seed, [t]: &mut [Tally; 1]| {
        let d = draw(seed, 1 + (seed % 2) as usize)?;
        t.record(&fd_oracle_rho_prime(&d.model, &d.params, &OracleObjective::FunctionInterference, &d.a, &d.b, &ALPHAS)?);
        Ok(())
    })?;
    out.push(rb.into_check("function_interference", n));

    let reg_obj = OracleObjective::Regression {
        r2_coefficient: opts.r2_coefficient,
    };
    let [reg] = until_checked(n, 2000, |seed, [t]: &mut [Tally; 1]| {
        let d = draw(seed, 1)?;
        t.record(&fd_oracle_rho_prime(&d.model, &d.params, &reg_obj, &d.a, &d.b, &ALPHAS)?);
        Ok(())
    })?;
    out.push(reg.into_check("regression_breakdown", n));

    let kinds = [
        ("td_self", TargetKind::Online, false),
        ("td_frozen", TargetKind::Frozen { period: 10_000 }, false),
        ("td_ema", TargetKind::Ema { tau: 0.01 }, false),
        ("td_ema_coupled", TargetKind::Ema { tau: 0.3 }, true),
    ];
    let td = until_checked(n, 3000, |seed, t: &mut [Tally; 4]| {
        let (d, shadow, a, b) = td_pair(seed, 1 + (seed % 2) as usize)?;
        for ((_, kind, coupled), t) in kinds.iter().zip(t) {
            let mut o = TdOptions::new(0.9, *kind);
            o.tau_coupling = *coupled;
            t.record(&fd_oracle_td(&d.model, &d.params, &shadow, &a, &b, &o, &ALPHAS)?);
        }
        Ok(())
    })?;
    for ((name, _, _), t) in kinds.iter().zip(td) {
        out.push(t.into_check(name, n));
    }

    let [msgd, mstep] = until_checked(n, 5000, |seed, t: &mut [Tally; 2]| {
        let d = draw(seed, 1)?;
        let mut r = rng::stream(seed, "mu");
        let mu = ParamVector::from_data(d.model.layout().clone(), random_vec(&mut r, d.params.len()))?;
        let objs = [
            OracleObjective::MomentumSgd { mu: &mu, beta: 0.9 },
            OracleObjective::MomentumStep { mu: &mu, beta: 0.9 },
        ];
        for (obj, t) in objs.iter().zip(t) {
            t.record(&fd_oracle_rho_prime(&d.model, &d.params, obj, &d.a, &d.b, &ALPHAS)?);
        }
        Ok(())
    })?;
    out.push(msgd.into_check("momentum_sgd_step", n));
    out.push(mstep.into_check("momentum_step", n));

    let mut worst = 0.0f64;
    for theta in [-1.5, 0.3, 1.0, 2.0] {
        let (m, p, a, b) = one_parameter(theta)?;
        worst = worst.max((rho_prime_general(&m, &p, &a, &b)? + 32.0 * theta * theta).abs());
    }
    out.push(below(
        s,
        "one_parameter_closed_form",
        worst,
        1e-12,
        "f = θx, x_A = 1, x_B = 2, y = 0: ρ′ = −32θ² for θ ∈ {−1.5, 0.3, 1, 2}".into(),
    ));

    let (m, p, a, b) = one_parameter(1.0)?;
    let rep = fd_oracle_rho_prime(&m, &p, &reg_obj, &a, &b, &ALPHAS)?;
    let (_, e) = rep.at(1e-6).expect("α = 1e-6 probed");
    out.push(below(
        s,
        "one_parameter_breakdown_oracle",
        e.residual / e.slope.abs(),
        1e-3,
        format!("analytic {} vs slope {:.6} at α = 1e-6; residual over |slope|", rep.analytic, e.slope),
    ));

    let wrong = fd_oracle_rho_prime(&m, &p, &OracleObjective::Regression { r2_coefficient: 2.0 }, &a, &b, &ALPHAS)?;
    let (_, e) = wrong.at(1e-6).expect("α = 1e-6 probed");
    let ratio = e.residual / e.slope.abs();
    out.push(check(
        s,
        "erratum_factor_two_fails",
        ratio,
        1e-4,
        wrong.analytic == -48.0 && (e.slope + 32.0).abs() < 1e-3 && (ratio - 0.5).abs() < 1e-4,
        format!(
            "with the second term doubled the analytic value is {} against a slope of {:.6}; residual/|slope| = {ratio:.6} (expected 16/32)",
            wrong.analytic, e.slope
        ),
    ));
    Ok(out)
}

// ---------------------------------------------------------------- identities

fn random_model(seed: u64, d: usize, outputs: usize) -> Result<(ValueModel, ParamVector)> {
    let mut r = rng::stream(seed, "identity-model");
    let spec = ModelSpec::mlp(d, r.random_range(3..8), r.random_range(0..2), outputs, Head::Value);
    let m = ValueModel::init(&spec, seed)?;
    let p = jitter(&m, &mut r, 0.1);
    Ok((m, p))
}

fn half_sq(r: &mut rng::Rng, d: usize) -> LossSample {
    LossSample::half_squared(Arc::new(Tensor::vector(random_vec(r, d))), None, r.random_range(-1.0..1.0))
}

fn chain_buffer(seed: u64) -> Result<(Vec<Transition>, ValueModel)> {
    let mdp = chain_mdp_with(6, ChainRewards { goal: 1.0, step: -0.1 }, 0.9, ChainOptions { actions: 2, slip: 0.3 })?;
    let q = value_iteration(&mdp)?;
    let enc = Encoding::Rbf { per_axis: 4, width: 0.3 };
    let buf = make_expert_buffer(&mdp, &q, 0.3, 200, seed, &enc)?;
    let (m, _) = random_model(seed, 4, 1)?;
    Ok((buf.iter().cloned().collect(), m))
}

fn identities(opts: &VerifyOptions) -> Result<Vec<Check>> {
    let s = Suite::Identities;
    let n = opts.draws.max(1) as u64;
    let mut out = Vec::new();

    let (mut fact, mut hf, mut total) = (0.0f64, 0.0f64, 0.0f64);
    let (mut td0_same, mut mom_same) = (0usize, 0usize);
    for seed in 0..n {
        let outputs = 1 + (seed % 3) as usize;
        let (m, p) = random_model(seed, 3, outputs)?;
        let mut r = rng::stream(seed, "pairs");
        let (a, b) = (half_sq(&mut r, 3), half_sq(&mut r, 3));
        let da = delta(&m, &p, &a)?.expect("squared loss has δ");
        let db = delta(&m, &p, &b)?.expect("squared loss has δ");
        fact = fact.max(rel_close(rho(&m, &p, &a, &b)?, da * db * rho_bar(&m, &p, &a.x, &b.x)?));
        let g = rho_prime_general(&m, &p, &a, &b)?;
        hf = hf.max(rel_close(g, hessian_free_rho_prime(&m, &p, &a, &b)?));

        let reg = rho_prime_reg_terms(&m, &p, &a, &b)?;
        let sum = reg.r1 + reg.r2 + reg.r3;
        total = total.max((reg.total + sum).abs() / (reg.r1.abs() + reg.r2.abs() + reg.r3.abs()).max(1e-300));

        let ta = TdSample {
            x: a.x.clone(),
            action: None,
            reward: match a.target {
                LossTarget::HalfSquared(y) => y,
                _ => unreachable!(),
            },
            next_x: Some(Arc::new(Tensor::vector(random_vec(&mut r, 3)))),
            done: false,
        };
        let tb = TdSample {
            x: b.x.clone(),
            action: None,
            reward: match b.target {
                LossTarget::HalfSquared(y) => y,
                _ => unreachable!(),
            },
            next_x: Some(Arc::new(Tensor::vector(random_vec(&mut r, 3)))),
            done: false,
        };
        if outputs == 1 {
            let td = rho_prime_td_terms(&m, &p, &p, &ta, &tb, &TdOptions::new(0.0, TargetKind::Online))?;
            if (td.r1, td.r2, td.r3, td.total) == (reg.r1, reg.r2, reg.r3, reg.total) {
                td0_same += 1;
            }
            let t9 = rho_prime_td_terms(&m, &p, &p, &ta, &tb, &TdOptions::new(0.9, TargetKind::Online))?;
            let s9 = t9.r1.abs() + t9.r2.abs() + t9.r3.abs();
            total = total.max((t9.total + t9.r1 + t9.r2 + t9.r3).abs() / s9.max(1e-300));
        } else {
            td0_same += 1;
        }

        let mu = ParamVector::from_data(m.layout().clone(), random_vec(&mut r, p.len()))?;
        let m0 = momentum_interference(&m, &p, &a, &b, &mu, 0.0)?;
        if m0.rho_mu == rho(&m, &p, &a, &b)? && m0.rho_prime_mu == g {
            mom_same += 1;
        }
    }
    out.push(below(s, "rho_factorizes", fact, 1e-12, format!("ρ = δ_Aδ_B·ρ̄ for squared losses, {n} draws, relative")));
    out.push(below(
        s,
        "general_equals_hessian_free",
        hf,
        1e-8,
        format!("ρ′ from HVPs vs the Hessian-free double backward, {n} draws, relative"),
    ));
    out.push(below(
        s,
        "breakdown_total",
        total,
        1e-12,
        format!("|total + r₁ + r₂ + r₃| / Σ|rᵢ| over {n} regression and TD breakdowns"),
    ));
    out.push(check(
        s,
        "td_at_zero_discount_is_regression",
        (n as usize - td0_same) as f64,
        0.0,
        td0_same == n as usize,
        format!("exact equality in {td0_same}/{n} draws"),
    ));
    out.push(check(
        s,
        "momentum_reduces_at_beta_zero",
        (n as usize - mom_same) as f64,
        0.0,
        mom_same == n as usize,
        format!("ρ_μ = ρ and ρ′_μ = ρ′ exactly in {mom_same}/{n} draws"),
    ));

    let (mut l0_total, mut l0_same, mut l1_same) = (0usize, 0usize, 0usize);
    for seed in 0..10 {
        let (all, m) = chain_buffer(seed)?;
        let values = ModelValue {
            model: &m,
            params: m.params(),
        };
        for traj in all.chunk_by(|a, b| a.trajectory == b.trajectory) {
            let l0 = lambda_returns(traj, &values, 0.9, 0.0)?;
            let l1 = lambda_returns(traj, &values, 0.9, 1.0)?;
            let mc = mc_returns(traj, 0.9)?;
            for (t, tr) in traj.iter().enumerate() {
                l0_total += 1;
                if l0[t] == td0_target(&values, tr, 0.9)? {
                    l0_same += 1;
                }
                if l1[t] == mc[t] && l1[t] == mc_return(traj, t, 0.9)? {
                    l1_same += 1;
                }
            }
        }
    }
    out.push(check(
        s,
        "lambda_zero_is_one_step_target",
        (l0_total - l0_same) as f64,
        0.0,
        l0_same == l0_total,
        format!("exact equality: {l0_same}/{l0_total} targets identical"),
    ));
    out.push(check(
        s,
        "lambda_one_is_monte_carlo_return",
        (l0_total - l1_same) as f64,
        0.0,
        l1_same == l0_total,
        format!("exact equality: {l1_same}/{l0_total} targets identical"),
    ));

    let mut w_worst = 0.0f64;
    for len in 1..=200 {
        for lambda in [0.0, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0] {
            w_worst = w_worst.max((lambda_weights(len, lambda).iter().sum::<f64>() - 1.0).abs());
        }
    }
    out.push(below(
        s,
        "lambda_weights_sum_to_one",
        w_worst,
        1e-12,
        "lengths 1..=200, λ ∈ {0, 0.25, 0.5, 0.75, 0.9, 0.99, 1}".into(),
    ));
    Ok(out)
}

// ---------------------------------------------------------------- DP

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_mdp(seed: u64) -> Result<TabularMdp> {
    let mut r = rng::stream(seed, "random-mdp");
    let s = r.random_range(2..=4);
    let a = r.random_range(2..=3);
    let mut p = Vec::with_capacity(s * a * s);
    for _ in 0..s * a {
        let w: Vec<f64> = (0..s).map(|_| r.random_range(0.0..1.0f64).powi(3)).collect();
        let z: f64 = w.iter().sum();
        p.extend(w.iter().map(|v| v / z));
    }
    for row in p.chunks_mut(s) {
        let z: f64 = row.iter().sum();
        row[0] += 1.0 - z;
    }
    let rew = (0..s * a * s).map(|_| r.random_range(-1.0..1.0)).collect();
    let coords = (0..s).map(|i| vec![i as f64 / (s - 1) as f64]).collect();
    Ok(TabularMdp::new(s, a, p, rew, vec![false; s], 0.8, 0, coords)?)
}

fn dp() -> Result<Vec<Check>> {
    let s = Suite::Dp;
    let mut out = Vec::new();

    let mdp = chain_mdp(5, ChainRewards { goal: 1.0, step: -0.1 }, 0.9)?;
    let right = Policy::deterministic(mdp.n_actions(), &vec![1; mdp.n_states()])?;
    let v_dp = dp_policy_evaluation(&mdp, &right)?;
    let v_td = tabular_td0(&mdp, &right, 0.1, 100_000, 3)?;
    out.push(below(
        s,
        "tabular_td0_matches_dp",
        sup(&v_td, &v_dp),
        1e-2,
        "5-state chain, always advance, 10⁵ episodes, α = 0.1; sup-norm".into(),
    ));

    let base = chain_mdp_with(5, ChainRewards { goal: 1.0, step: -0.05 }, 0.9, ChainOptions { actions: 2, slip: 0.2 })?;
    let pi = Policy::new(base.n_states(), 2, [0.3, 0.7].repeat(base.n_states()))?;
    let v = dp_policy_evaluation(&base, &pi)?;
    let n = 100_000u64;
    let mut worst = 0.0f64;
    for st in 0..5 {
        let m = base.clone().with_start(st)?;
        let mut r = rng::stream(st as u64, "mc-vs-dp");
        let (mut sum, mut sq) = (0.0, 0.0);
        for k in 0..n {
            let g = mc_return(&rollout(&m, &pi, &Encoding::OneHot, k, &mut r)?, 0, 0.9)?;
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        worst = worst.max((mean - v[st]).abs() / se);
    }
    out.push(below(
        s,
        "monte_carlo_matches_dp",
        worst,
        3.0,
        "slippery 5-state chain, stochastic policy, 10⁵ episodes per start state; |MC − DP| in standard errors".into(),
    ));

    let mut worst = 0.0f64;
    let mut mdps = (0..25).map(random_mdp).collect::<Result<Vec<_>>>()?;
    mdps.push(chain_mdp(3, ChainRewards::default(), 0.9)?);
    for mdp in &mdps {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let q = value_iteration(mdp)?;
        let greedy: Vec<usize> = q.iter().map(|row| argmax(row)).collect();
        let v_greedy = dp_policy_evaluation(mdp, &Policy::deterministic(na, &greedy)?)?;
        let mut best = vec![f64::NEG_INFINITY; ns];
        for mut k in 0..na.pow(ns as u32) {
            let pol: Vec<usize> = (0..ns)
                .map(|_| {
                    let a = k % na;
                    k /= na;
                    a
                })
                .collect();
            let v = dp_policy_evaluation(mdp, &Policy::deterministic(na, &pol)?)?;
            for (b, x) in best.iter_mut().zip(&v) {
                *b = b.max(*x);
            }
        }
        worst = worst.max(sup(&v_greedy, &best));
    }
    out.push(below(
        s,
        "greedy_q_star_matches_enumeration",
        worst,
        1e-8,
        format!("{} MDPs with ≤ 4 states; sup-norm against the best deterministic policy", mdps.len()),
    ));
    Ok(out)
}

// ---------------------------------------------------------------- statistics

/// `det(M − λI)` by Gaussian elimination with partial pivoting.
fn char_poly(m: &[Vec<f64>], lambda: f64) -> f64 {
    let n = m.len();
    let mut a = m.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap_or(c);
        if a[p][c] == 0.0 {
            return 0.0;
        }
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= a[c][c];
        for i in c + 1..n {
            let f = a[i][c] / a[c][c];
            for j in c..n {
                a[i][j] -= f * a[c][j];
            }
        }
    }
    det
}

/// Eigenvalues of a symmetric PSD matrix: sign changes of the
/// characteristic polynomial on a fine grid, refined by bisection.
fn eigenvalues_brute_force(m: &[Vec<f64>]) -> Vec<f64> {
    let hi: f64 = (0..m.len()).map(|i| m[i][i]).sum::<f64>() + 1.0;
    let grid = 200_000;
    let mut roots = Vec::new();
    let mut prev = char_poly(m, 0.0);
    let mut x0 = 0.0;
    for k in 1..=grid {
        let x1 = hi * k as f64 / grid as f64;
        let v = char_poly(m, x1);
        if prev == 0.0 {
            roots.push(x0);
        } else if prev.signum() != v.signum() && v != 0.0 {
            let (mut lo, mut up, mut flo) = (x0, x1, prev);
            for _ in 0..200 {
                let mid = 0.5 * (lo + up);
                let fm = char_poly(m, mid);
                if fm.signum() == flo.signum() {
                    lo = mid;
                    flo = fm;
                } else {
                    up = mid;
                }
            }
            roots.push(0.5 * (lo + up));
        }
        prev = v;
        x0 = x1;
    }
    roots.sort_by(|a, b| b.total_cmp(a));
    roots
}

fn stats() -> Result<Vec<Check>> {
    let s = Suite::Stats;
    let mut out = Vec::new();
    let cases = [
        ([2.0, 4.0, 6.0], 1.0),
        ([3.0, 2.0, 1.0], -1.0),
        ([1.0, 3.0, 2.0], 0.5),
    ];
    let mut worst = 0.0f64;
    for (ys, want) in cases {
        let r = pearson_r(&[1.0, 2.0, 3.0], &ys).unwrap_or(f64::NAN);
        worst = worst.max((r - want).abs());
    }
    out.push(below(s, "pearson_hand_cases", worst, 1e-12, "x = (1,2,3) against (2,4,6), (3,2,1), (1,3,2): r = 1, −1, 0.5".into()));

    let sv = [
        (vec![1.0; 5], 0.0),
        (vec![1.0, -1.0, 1.0, -1.0, 1.0], 0.96),
        (vec![1.0, 1.0, 1.0, 1.0, -1.0], 0.64),
    ];
    let mut worst = 0.0f64;
    for (traj, want) in sv {
        let v = sign_variance(&[traj], 5).unwrap_or(f64::NAN);
        worst = worst.max((v - want).abs());
    }
    out.push(below(s, "sign_variance_hand_cases", worst, 1e-12, "window 5: constant, alternating, one flip → 0, 0.96, 0.64".into()));

    let mut worst = 0.0f64;
    let mut missing = 0;
    for seed in 0..20 {
        let mut r = rng::stream(seed, "svd");
        let a: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut r, 4)).collect();
        let gram: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| (0..5).map(|k| a[k][i] * a[k][j]).sum()).collect())
            .collect();
        let eig = eigenvalues_brute_force(&gram);
        if eig.len() != 4 {
            missing += 1;
            continue;
        }
        for (sv, ev) in singular_values(&Tensor::matrix(&a))?.iter().zip(&eig) {
            worst = worst.max((sv * sv - ev).abs());
        }
    }
    out.push(check(
        s,
        "jacobi_svd_matches_eigen_brute_force",
        worst,
        1e-8,
        worst < 1e-8 && missing == 0,
        format!("σ² against roots of det(AᵀA − λI) for 20 random 5×4 matrices; {missing} root searches incomplete"),
    ));
    Ok(out)
}
