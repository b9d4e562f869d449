use std::sync::Arc;

use proptest::prelude::*;
use rand::Rng as _;
use tdi_autodiff::{ParamVector, Tensor};
use tdi_core::env::{
    chain_mdp_with, grid_mdp_with, make_expert_buffer, mc_return, mc_returns, value_iteration, ChainOptions,
    ChainRewards, Encoding, Obs, Transition,
};
use tdi_core::learners::{
    ddqn_loss, distill_losses, lambda_returns, lambda_weights, ql_loss, reinforce_gradient, reinforce_surrogate,
    td0_target, EpisodeStep, ModelValue, TabularExpert,
};
use tdi_core::metrics::{pair_sample_metrics, rho, rho_bar, singular_values, stiffness};
use tdi_core::models::{Head, ModelSpec, ValueModel};
use tdi_core::rng;
use tdi_core::sample::{delta, LossSample};

fn random_vec(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn random_model(seed: u64, d: usize, outputs: usize, head: Head) -> (ValueModel, ParamVector) {
    let mut r = rng::stream(seed, "identity-model");
    let spec = ModelSpec::mlp(d, r.random_range(3..8), r.random_range(0..2), outputs, head);
    let m = ValueModel::init(&spec, seed).unwrap();
    let mut p = m.params().clone();
    for (v, b) in p.data_mut().iter_mut().zip(random_vec(&mut r, m.params().len())) {
        *v += 0.1 * b;
    }
    (m, p)
}

fn sample(r: &mut rng::Rng, d: usize) -> LossSample {
    LossSample::half_squared(Arc::new(Tensor::vector(random_vec(r, d))), None, r.random_range(-1.0..1.0))
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

#[test]
fn interference_factors_into_deltas_and_function_interference() {
    for seed in 0..100 {
        let outputs = 1 + (seed % 3) as usize;
        let (m, p) = random_model(seed, 3, outputs, Head::Value);
        let mut r = rng::stream(seed, "pairs");
        let (a, b) = (sample(&mut r, 3), sample(&mut r, 3));
        let da = delta(&m, &p, &a).unwrap().unwrap();
        let db = delta(&m, &p, &b).unwrap().unwrap();
        let rb = rho_bar(&m, &p, &a.x, &b.x).unwrap();
        let rh = rho(&m, &p, &a, &b).unwrap();
        assert!(close(rh, da * db * rb, 1e-9), "seed {seed}: {rh} vs {}", da * db * rb);
    }
}

#[test]
fn pair_sample_metrics_cover_a_full_grid_and_factor() {
    let (m, p) = random_model(7, 4, 1, Head::Value);
    let mut r = rng::stream(7, "grid");
    let samples: Vec<LossSample> = (0..100).map(|_| sample(&mut r, 4)).collect();
    let ids: Vec<usize> = (500..600).collect();
    let recs = pair_sample_metrics(&m, &p, &samples, &ids, 1024, 3, 9).unwrap();
    assert_eq!(recs.len(), 1024);
    for rec in &recs {
        assert_eq!(rec.checkpoint, 9);
        assert!(ids.contains(&rec.pair_a) && ids.contains(&rec.pair_b));
        let dd = rec.delta_a.unwrap() * rec.delta_b.unwrap();
        assert!(close(rec.rho, dd * rec.rho_bar, 1e-9));
    }
    assert_eq!(recs, pair_sample_metrics(&m, &p, &samples, &ids, 1024, 3, 9).unwrap());
}

fn chain_buffer(seed: u64) -> (Vec<Transition>, ValueModel) {
    let mdp = chain_mdp_with(6, ChainRewards { goal: 1.0, step: -0.1 }, 0.9, ChainOptions { actions: 2, slip: 0.3 })
        .unwrap();
    let q = value_iteration(&mdp).unwrap();
    let enc = Encoding::Rbf { per_axis: 4, width: 0.3 };
    let buf = make_expert_buffer(&mdp, &q, 0.3, 200, seed, &enc).unwrap();
    let (m, _) = random_model(seed, 4, 1, Head::Value);
    (buf.iter().cloned().collect(), m)
}

#[test]
fn lambda_endpoints_are_exact() {
    for seed in 0..10 {
        let (all, m) = chain_buffer(seed);
        let values = ModelValue {
            model: &m,
            params: m.params(),
        };
        for traj in all.chunk_by(|a, b| a.trajectory == b.trajectory) {
            let l0 = lambda_returns(traj, &values, 0.9, 0.0).unwrap();
            let l1 = lambda_returns(traj, &values, 0.9, 1.0).unwrap();
            let mc = mc_returns(traj, 0.9).unwrap();
            for (t, tr) in traj.iter().enumerate() {
                assert_eq!(l0[t], td0_target(&values, tr, 0.9).unwrap());
                assert_eq!(l1[t], mc[t]);
                assert_eq!(l1[t], mc_return(traj, t, 0.9).unwrap());
            }
        }
    }
}

proptest! {
    #[test]
    fn lambda_weights_sum_to_one(n in 1usize..200, lambda in 0.0f64..=1.0) {
        let w = lambda_weights(n, lambda);
        prop_assert_eq!(w.len(), n);
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn stiffness_is_bounded_and_symmetric(seed in 0u64..10_000) {
        let (m, p) = random_model(seed, 3, 2, Head::Value);
        let mut r = rng::stream(seed, "sym");
        let (a, b) = (sample(&mut r, 3), sample(&mut r, 3));
        if let Some(s) = stiffness(&m, &p, &a, &b).unwrap() {
            prop_assert!((-1.0..=1.0).contains(&s));
            prop_assert_eq!(Some(s), stiffness(&m, &p, &b, &a).unwrap());
        }
        prop_assert_eq!(rho(&m, &p, &a, &b).unwrap(), rho(&m, &p, &b, &a).unwrap());
        prop_assert_eq!(rho_bar(&m, &p, &a.x, &b.x).unwrap(), rho_bar(&m, &p, &b.x, &a.x).unwrap());
    }

    #[test]
    fn singular_values_invariant_under_transpose(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
        let mut r = rng::seeded(seed);
        let data: Vec<Vec<f64>> = (0..rows).map(|_| random_vec(&mut r, cols)).collect();
        let t: Vec<Vec<f64>> = (0..cols).map(|j| data.iter().map(|row| row[j]).collect()).collect();
        let s = singular_values(&Tensor::matrix(&data)).unwrap();
        let st = singular_values(&Tensor::matrix(&t)).unwrap();
        prop_assert_eq!(s.len(), st.len());
        for (x, y) in s.iter().zip(&st) {
            prop_assert!((x - y).abs() < 1e-10);
        }
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]));
    }
}

/// `det(M − λI)` by Gaussian elimination with partial pivoting.
fn char_poly(m: &[Vec<f64>], lambda: f64) -> f64 {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    for (i, row) in a.iter_mut().enumerate() {
        row[i] -= lambda;
    }
    let mut det = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
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

/// Roots of the characteristic polynomial on `[0, hi]` by scanning for sign
/// changes and bisecting.
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

#[test]
fn singular_values_match_eigenvalues_of_the_gram_matrix() {
    for seed in 0..20 {
        let mut r = rng::stream(seed, "svd");
        let a: Vec<Vec<f64>> = (0..5).map(|_| random_vec(&mut r, 4)).collect();
        let gram: Vec<Vec<f64>> = (0..4)
            .map(|i| (0..4).map(|j| (0..5).map(|k| a[k][i] * a[k][j]).sum()).collect())
            .collect();
        let eig = eigenvalues_brute_force(&gram);
        assert_eq!(eig.len(), 4, "seed {seed}: roots {eig:?}");
        let s = singular_values(&Tensor::matrix(&a)).unwrap();
        for (sv, ev) in s.iter().zip(&eig) {
            assert!((sv * sv - ev).abs() < 1e-8, "seed {seed}: {} vs {ev}", sv * sv);
        }
    }
}

#[test]
fn double_q_equals_q_learning_with_shared_parameters() {
    for seed in 0..50 {
        let (m, p) = random_model(seed, 3, 3, Head::Value);
        let mut r = rng::stream(seed, "ddqn");
        let tr = Transition {
            state: Obs::new(0, Tensor::vector(random_vec(&mut r, 3))),
            action: r.random_range(0..3),
            reward: r.random_range(-1.0..1.0),
            next_state: Obs::new(1, Tensor::vector(random_vec(&mut r, 3))),
            done: false,
            trajectory: 0,
            step: 0,
        };
        let q = ql_loss(&m, &p, &p, &tr, 0.9).unwrap();
        let d = ddqn_loss(&m, &p, &p, &tr, 0.9).unwrap();
        assert!((q - d).abs() < 1e-12);
    }
}

#[test]
fn distillation_to_an_exact_expert_makes_td_star_equal_regression() {
    let mdp = grid_mdp_with(4, 3, 0.9, 0.0).unwrap();
    let q = value_iteration(&mdp).unwrap();
    let buf = make_expert_buffer(&mdp, &q, 0.05, 500, 2, &Encoding::OneHot).unwrap();
    let spec = ModelSpec::mlp(mdp.n_states(), 8, 0, mdp.n_actions(), Head::Value);
    let m = ValueModel::init(&spec, 1).unwrap();
    let expert = TabularExpert(q);
    let all: Vec<Transition> = buf.iter().cloned().collect();
    for traj in all.chunk_by(|a, b| a.trajectory == b.trajectory) {
        let g = mc_returns(traj, 0.9).unwrap();
        for (t, gt) in traj.iter().zip(g) {
            let l = distill_losses(&m, m.params(), t, &expert, gt, 0.9).unwrap();
            assert!((l.td_star - l.reg).abs() < 1e-9, "{l:?}");
        }
    }
}

#[test]
fn reinforce_gradient_matches_central_differences() {
    for seed in 0..20 {
        let (m, p) = random_model(seed, 3, 3, Head::Classifier);
        let mut r = rng::stream(seed, "episode");
        let episode: Vec<EpisodeStep> = (0..r.random_range(1..6))
            .map(|i| EpisodeStep {
                state: Obs::new(i, Tensor::vector(random_vec(&mut r, 3))),
                action: r.random_range(0..3),
                reward: r.random_range(-1.0..1.0),
            })
            .collect();
        let g = reinforce_gradient(&m, &p, &episode, 0.9).unwrap().grad;
        let h = 1e-5;
        let mut fd = ParamVector::zeros(p.layout().clone());
        for i in 0..p.len() {
            let mut up = p.clone();
            up.data_mut()[i] += h;
            let mut dn = p.clone();
            dn.data_mut()[i] -= h;
            let d = reinforce_surrogate(&m, &up, &episode, 0.9).unwrap() - reinforce_surrogate(&m, &dn, &episode, 0.9).unwrap();
            fd.data_mut()[i] = d / (2.0 * h);
        }
        let err = tdi_autodiff::max_relative_error(&g, &fd).unwrap();
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}
