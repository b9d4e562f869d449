use rand::Rng as _;
use tdi_core::env::{
    chain_mdp, chain_mdp_with, dp_policy_evaluation, grid_mdp_with, make_expert_buffer, mc_return, rollout,
    value_iteration, ChainOptions, ChainRewards, Encoding, Policy, TabularMdp,
};
use tdi_core::learners::tabular_td0;
use tdi_core::rng;

fn sup(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn tabular_td0_matches_dynamic_programming_on_a_five_state_chain() {
    let rewards = ChainRewards { goal: 1.0, step: -0.1 };
    let mdp = chain_mdp(5, rewards, 0.9).unwrap();
    let right = Policy::deterministic(2, &[1; 6]).unwrap();
    let dp = dp_policy_evaluation(&mdp, &right).unwrap();
    let td = tabular_td0(&mdp, &right, 0.1, 100_000, 3).unwrap();
    let err = sup(&td, &dp);
    assert!(err < 1e-2, "sup-norm {err}");
    assert_eq!(td[5], 0.0);
}

#[test]
fn monte_carlo_matches_dynamic_programming_within_three_standard_errors() {
    let opts = ChainOptions { actions: 2, slip: 0.2 };
    let rewards = ChainRewards { goal: 1.0, step: -0.05 };
    let base = chain_mdp_with(5, rewards, 0.9, opts).unwrap();
    let pi = Policy::new(6, 2, [0.3, 0.7].repeat(6)).unwrap();
    let dp = dp_policy_evaluation(&base, &pi).unwrap();
    let n = 100_000;
    let enc = Encoding::OneHot;
    for s in 0..5 {
        let mdp = base.clone().with_start(s).unwrap();
        let mut r = rng::stream(s as u64, "mc-vs-dp");
        let (mut sum, mut sq) = (0.0, 0.0);
        for k in 0..n {
            let traj = rollout(&mdp, &pi, &enc, k, &mut r).unwrap();
            let g = mc_return(&traj, 0, 0.9).unwrap();
            sum += g;
            sq += g * g;
        }
        let mean = sum / n as f64;
        let se = ((sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - dp[s]).abs() < 3.0 * se, "state {s}: MC {mean} ± {se}, DP {}", dp[s]);
    }
}

fn all_deterministic_policies(n_states: usize, n_actions: usize) -> Vec<Vec<usize>> {
    let total = n_actions.pow(n_states as u32);
    (0..total)
        .map(|mut k| {
            (0..n_states)
                .map(|_| {
                    let a = k % n_actions;
                    k /= n_actions;
                    a
                })
                .collect()
        })
        .collect()
}

fn random_mdp(seed: u64) -> TabularMdp {
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
    TabularMdp::new(s, a, p, rew, vec![false; s], 0.8, 0, coords).unwrap()
}

#[test]
fn greedy_policy_from_optimal_q_matches_exhaustive_search() {
    let mut mdps: Vec<TabularMdp> = (0..25).map(random_mdp).collect();
    mdps.push(chain_mdp(3, ChainRewards::default(), 0.9).unwrap());
    mdps.push(grid_mdp_with(2, 2, 0.9, 0.1).unwrap());
    for (k, mdp) in mdps.iter().enumerate() {
        let (s, a) = (mdp.n_states(), mdp.n_actions());
        let q = value_iteration(mdp).unwrap();
        let greedy: Vec<usize> = q.iter().map(|row| tdi_core::env::argmax(row)).collect();
        let v_greedy = dp_policy_evaluation(mdp, &Policy::deterministic(a, &greedy).unwrap()).unwrap();
        let mut best = vec![f64::NEG_INFINITY; s];
        for pol in all_deterministic_policies(s, a) {
            let v = dp_policy_evaluation(mdp, &Policy::deterministic(a, &pol).unwrap()).unwrap();
            for (b, x) in best.iter_mut().zip(&v) {
                *b = b.max(*x);
            }
        }
        assert!(sup(&v_greedy, &best) < 1e-8, "mdp {k}: {v_greedy:?} vs {best:?}");
        for st in 0..s {
            let vmax = q[st].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!((vmax - best[st]).abs() < 1e-8);
        }
    }
}

#[test]
fn fully_random_expert_buffer_has_uniform_actions() {
    let mdp = grid_mdp_with(4, 4, 0.9, 0.0).unwrap();
    let q = value_iteration(&mdp).unwrap();
    let buf = make_expert_buffer(&mdp, &q, 1.0, 20_000, 11, &Encoding::OneHot).unwrap();
    let n = buf.len() as f64;
    let a_n = mdp.n_actions();
    let mut counts = vec![0usize; a_n];
    for t in buf.iter() {
        counts[t.action] += 1;
    }
    let p = 1.0 / a_n as f64;
    let sigma = (n * p * (1.0 - p)).sqrt();
    for (a, &c) in counts.iter().enumerate() {
        assert!((c as f64 - n * p).abs() < 3.0 * sigma, "action {a}: {c} of {n}");
    }
}

#[test]
fn buffer_transitions_respect_the_transition_support() {
    let mdp = grid_mdp_with(3, 3, 0.9, 0.2).unwrap();
    let q = value_iteration(&mdp).unwrap();
    let buf = make_expert_buffer(&mdp, &q, 0.05, 2_000, 5, &Encoding::OneHot).unwrap();
    assert!(buf.check_contiguous());
    for t in buf.iter() {
        assert!(mdp.row(t.state.id, t.action)[t.next_state.id] > 0.0);
        assert_eq!(t.reward, mdp.reward(t.state.id, t.action, t.next_state.id));
        assert_eq!(t.done, mdp.is_terminal(t.next_state.id));
    }
}
