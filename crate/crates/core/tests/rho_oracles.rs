use std::sync::Arc;

use rand::Rng;
use tdi_autodiff::{ParamVector, Tensor};
use tdi_core::learners::TargetKind;
use tdi_core::models::{Head, ModelSpec, ValueModel};
use tdi_core::rho_dynamics::*;
use tdi_core::rng;
use tdi_core::sample::LossSample;

const ALPHAS: [f64; 2] = [1e-5, 1e-6];
const DRAWS: usize = 100;
/// Draws whose step crosses a kink cannot be adjudicated by a forward
/// difference; they are skipped but must stay rare.
const MAX_KINKED: usize = DRAWS / 20;

struct Draw {
    model: ValueModel,
    params: ParamVector,
    a: LossSample,
    b: LossSample,
}

fn random_vec(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn draw(seed: u64, outputs: usize, head: Head) -> Draw {
    let mut r = rng::stream(seed, "oracle-draw");
    let d = r.random_range(2..5);
    let spec = ModelSpec::mlp(d, r.random_range(3..7), r.random_range(0..2), outputs, head);
    let model = ValueModel::init(&spec, seed).unwrap();
    let mut params = model.params().clone();
    let bias: Vec<f64> = random_vec(&mut r, params.len());
    for (p, b) in params.data_mut().iter_mut().zip(bias) {
        *p += 0.2 * b;
    }
    let sample = |r: &mut rng::Rng| {
        let act = (outputs > 1).then(|| r.random_range(0..outputs));
        LossSample::half_squared(Arc::new(Tensor::vector(random_vec(r, d))), act, r.random_range(-1.0..1.0))
    };
    let a = sample(&mut r);
    let b = sample(&mut r);
    Draw { model, params, a, b }
}

#[derive(Default)]
struct Tally {
    checked: usize,
    kinked: usize,
}

impl Tally {
    fn done(&self) -> bool {
        self.checked >= DRAWS
    }

    fn record(&mut self, rep: &FdReport, label: &str) {
        assert!(self.kinked <= MAX_KINKED, "{label}: too many draws cross a kink");
        if rep.kink_crossed == Some(true) {
            self.kinked += 1;
            return;
        }
        assert_first_order(rep, label);
        self.checked += 1;
    }
}

/// Feeds seeds to `body` until every tally holds `DRAWS` smooth draws.
fn until_checked<const N: usize>(mut body: impl FnMut(u64, &mut [Tally; N])) {
    let mut tallies: [Tally; N] = std::array::from_fn(|_| Tally::default());
    let mut seed = 0;
    while !tallies.iter().all(Tally::done) {
        body(seed, &mut tallies);
        seed += 1;
    }
}

fn assert_first_order(rep: &FdReport, label: &str) {
    let (i, _) = rep.at(1e-6).unwrap();
    let rel = rep.relative_error(i);
    assert!(rel < 1e-3, "{label}: relative error {rel:e} (analytic {})", rep.analytic);
    if let Some(ratio) = rep.scaling_ratio(0) {
        assert!((0.3..=3.0).contains(&ratio), "{label}: residual ratio {ratio} ({rep:?})");
    }
}

#[test]
fn general_and_hessian_free_match_finite_differences() {
    until_checked(|seed, t: &mut [Tally; 2]| {
        let d = draw(seed, 1 + (seed % 2) as usize, Head::Value);
        for (obj, t) in [OracleObjective::General, OracleObjective::HessianFree].iter().zip(t) {
            let rep = fd_oracle_rho_prime(&d.model, &d.params, obj, &d.a, &d.b, &ALPHAS).unwrap();
            t.record(&rep, &format!("{} seed {seed}", obj.name()));
        }
        let g = rho_prime_general(&d.model, &d.params, &d.a, &d.b).unwrap();
        let h = hessian_free_rho_prime(&d.model, &d.params, &d.a, &d.b).unwrap();
        assert!((g - h).abs() <= 1e-8 * g.abs().max(1e-300), "seed {seed}: {g} vs {h}");
    });
}

#[test]
fn function_interference_derivative() {
    until_checked(|seed, [t]: &mut [Tally; 1]| {
        let d = draw(seed + 1000, 1 + (seed % 2) as usize, Head::Value);
        let rep = fd_oracle_rho_prime(&d.model, &d.params, &OracleObjective::FunctionInterference, &d.a, &d.b, &ALPHAS)
            .unwrap();
        t.record(&rep, &format!("rho_bar seed {seed}"));
    });
}

#[test]
fn regression_terms_match_and_printed_coefficient_does_not() {
    until_checked(|seed, [tally]: &mut [Tally; 1]| {
        let d = draw(seed + 2000, 1, Head::Value);
        let obj = OracleObjective::Regression { r2_coefficient: 1.0 };
        let rep = fd_oracle_rho_prime(&d.model, &d.params, &obj, &d.a, &d.b, &ALPHAS).unwrap();
        tally.record(&rep, &format!("reg seed {seed}"));
        let t = rho_prime_reg_terms(&d.model, &d.params, &d.a, &d.b).unwrap();
        assert!((t.total + t.r1 + t.r2 + t.r3).abs() <= 1e-10 * t.total.abs().max(1.0));
        let g = rho_prime_general(&d.model, &d.params, &d.a, &d.b).unwrap();
        assert!((t.total - g).abs() <= 1e-8 * g.abs().max(1e-12));
    });
}

fn td_pair(seed: u64, outputs: usize) -> (ValueModel, ParamVector, ParamVector, TdSample, TdSample) {
    let d = draw(seed, outputs, Head::Value);
    let mut r = rng::stream(seed, "td-pair");
    let n = d.params.len();
    let shadow = d.params.plus(0.05, &ParamVector::from_data(d.model.layout().clone(), random_vec(&mut r, n)).unwrap()).unwrap();
    let dim = d.model.spec().input_shape[0];
    let mk = |s: &LossSample, r: &mut rng::Rng| TdSample {
        x: s.x.clone(),
        action: s.action,
        reward: r.random_range(-1.0..1.0),
        next_x: Some(Arc::new(Tensor::vector(random_vec(r, dim)))),
        done: false,
    };
    let a = mk(&d.a, &mut r);
    let b = mk(&d.b, &mut r);
    (d.model, d.params, shadow, a, b)
}

#[test]
fn td_breakdowns_match_finite_differences() {
    let kinds = [
        (TargetKind::Online, false),
        (TargetKind::Frozen { period: 10_000 }, false),
        (TargetKind::Ema { tau: 0.01 }, false),
        (TargetKind::Ema { tau: 0.3 }, true),
    ];
    until_checked(|seed, tallies: &mut [Tally; 4]| {
        let (m, p, shadow, a, b) = td_pair(seed + 3000, 1 + (seed % 2) as usize);
        for ((kind, coupled), tally) in kinds.iter().zip(tallies) {
            let mut opts = TdOptions::new(0.9, *kind);
            opts.tau_coupling = *coupled;
            let rep = fd_oracle_td(&m, &p, &shadow, &a, &b, &opts, &ALPHAS).unwrap();
            tally.record(&rep, &format!("{kind:?} seed {seed}"));
            let t = rho_prime_td_terms(&m, &p, &shadow, &a, &b, &opts).unwrap();
            assert!((t.total + t.r1 + t.r2 + t.r3).abs() <= 1e-10 * t.total.abs().max(1.0));
        }
    });
}

#[test]
fn td_at_zero_discount_is_regression() {
    for seed in 0..20 {
        let (m, p, shadow, a, b) = td_pair(seed + 4000, 1);
        let td = rho_prime_td_terms(&m, &p, &shadow, &a, &b, &TdOptions::new(0.0, TargetKind::Online)).unwrap();
        let la = LossSample::half_squared(a.x.clone(), a.action, a.reward);
        let lb = LossSample::half_squared(b.x.clone(), b.action, b.reward);
        let reg = rho_prime_reg_terms(&m, &p, &la, &lb).unwrap();
        assert_eq!((td.r1, td.r2, td.r3, td.total), (reg.r1, reg.r2, reg.r3, reg.total));
    }
}

#[test]
fn momentum_forms() {
    until_checked(|seed, tallies: &mut [Tally; 2]| {
        let d = draw(seed + 5000, 1, Head::Value);
        let mut r = rng::stream(seed, "mu");
        let mu = ParamVector::from_data(d.model.layout().clone(), random_vec(&mut r, d.params.len())).unwrap();
        let beta = 0.9;
        let objectives = [OracleObjective::MomentumSgd { mu: &mu, beta }, OracleObjective::MomentumStep { mu: &mu, beta }];
        for (obj, tally) in objectives.iter().zip(tallies) {
            let rep = fd_oracle_rho_prime(&d.model, &d.params, obj, &d.a, &d.b, &ALPHAS).unwrap();
            tally.record(&rep, &format!("{} seed {seed}", obj.name()));
        }
        let m0 = momentum_interference(&d.model, &d.params, &d.a, &d.b, &mu, 0.0).unwrap();
        let rho = tdi_core::metrics::rho(&d.model, &d.params, &d.a, &d.b).unwrap();
        let rp = rho_prime_general(&d.model, &d.params, &d.a, &d.b).unwrap();
        assert_eq!(m0.rho_mu, rho);
        assert_eq!(m0.rho_prime_mu, rp);
        let zero = ParamVector::zeros(d.model.layout().clone());
        let mz = momentum_interference(&d.model, &d.params, &d.a, &d.b, &zero, beta).unwrap();
        assert!((mz.rho_mu - (1.0 - beta) * rho).abs() <= 1e-14 * rho.abs().max(1.0));
    });
}

#[test]
fn printed_coefficient_fails_the_oracle() {
    let m = ValueModel::init(&ModelSpec::linear(1, 1, Head::Value), 0).unwrap();
    let p = ParamVector::from_data(m.layout().clone(), vec![1.0]).unwrap();
    let s = |x: f64| LossSample::half_squared(Arc::new(Tensor::vector(vec![x])), None, 0.0);
    let obj = OracleObjective::Regression { r2_coefficient: 2.0 };
    let rep = fd_oracle_rho_prime(&m, &p, &obj, &s(1.0), &s(2.0), &ALPHAS).unwrap();
    assert_eq!(rep.analytic, -48.0);
    let (i, e) = rep.at(1e-6).unwrap();
    assert!((e.slope + 32.0).abs() < 1e-3);
    assert!((rep.relative_error(i) - 16.0 / 48.0).abs() < 1e-4);
    assert_eq!(rep.kink_crossed, Some(false));
}
