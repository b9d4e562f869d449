//! Finite MDPs with exact dynamic-programming solutions.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use tdi_autodiff::Tensor;

use crate::error::{CoreError, Result};
use crate::rng::Rng;

const STOCHASTIC_TOL: f64 = 1e-12;
const DP_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000_000;

/// Dense finite MDP. Rewards are attached to `(s, a, s′)` triples.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// `p[(s*A + a)*S + s′]`
    p: Vec<f64>,
    r: Vec<f64>,
    terminal: Vec<bool>,
    gamma: f64,
    start: usize,
    /// Geometric position of each state in `[0, 1]^d`, used by feature encoders.
    coords: Vec<Vec<f64>>,
}

impl TabularMdp {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        terminal: Vec<bool>,
        gamma: f64,
        start: usize,
        coords: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let m = TabularMdp {
            n_states,
            n_actions,
            p,
            r,
            terminal,
            gamma,
            start,
            coords,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::InvalidMdp(m));
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 {
            return bad("state and action counts must be positive".into());
        }
        if self.p.len() != s * a * s || self.r.len() != s * a * s {
            return bad("transition or reward table has the wrong size".into());
        }
        if self.terminal.len() != s || self.coords.len() != s || self.start >= s {
            return bad("terminal set, coordinates or start state inconsistent".into());
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("discount {} outside [0, 1]", self.gamma));
        }
        if self.r.iter().any(|v| !v.is_finite()) {
            return bad("rewards must be finite".into());
        }
        for st in 0..s {
            for ac in 0..a {
                let row = self.row(st, ac);
                if row.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
                    return bad(format!("P(·|{st},{ac}) has entries outside [0, 1]"));
                }
                let total: f64 = row.iter().sum();
                if (total - 1.0).abs() > STOCHASTIC_TOL {
                    return bad(format!("P(·|{st},{ac}) sums to {total}"));
                }
                if self.terminal[st] && (row[st] != 1.0 || self.r_row(st, ac)[st] != 0.0) {
                    return bad(format!("terminal state {st} must be absorbing with zero reward"));
                }
            }
        }
        if self.gamma >= 1.0 && !self.always_terminates() {
            return bad("undiscounted MDP has policies that never terminate".into());
        }
        Ok(())
    }

    /// True when no nonempty set of nonterminal states can be held forever.
    fn always_terminates(&self) -> bool {
        let mut trap: Vec<bool> = self.terminal.iter().map(|t| !t).collect();
        loop {
            let mut changed = false;
            for s in 0..self.n_states {
                if !trap[s] {
                    continue;
                }
                let keeps = (0..self.n_actions).any(|a| {
                    self.row(s, a)
                        .iter()
                        .enumerate()
                        .all(|(s2, &q)| q == 0.0 || trap[s2])
                });
                if !keeps {
                    trap[s] = false;
                    changed = true;
                }
            }
            if !changed {
                return !trap.iter().any(|&t| t);
            }
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn coords(&self, s: usize) -> &[f64] {
        &self.coords[s]
    }

    /// `P(·|s, a)`.
    pub fn row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.p[base..base + self.n_states]
    }

    fn r_row(&self, s: usize, a: usize) -> &[f64] {
        let base = (s * self.n_actions + a) * self.n_states;
        &self.r[base..base + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.r_row(s, a)[s2]
    }

    /// Expected immediate reward `R(s, a)`.
    pub fn expected_reward(&self, s: usize, a: usize) -> f64 {
        self.row(s, a).iter().zip(self.r_row(s, a)).map(|(p, r)| p * r).sum()
    }

    /// Sample `(s′, r, done)`.
    pub fn sample_step(&self, s: usize, a: usize, rng: &mut Rng) -> (usize, f64, bool) {
        let u: f64 = rng.random();
        let row = self.row(s, a);
        let mut acc = 0.0;
        let mut s2 = self.n_states - 1;
        for (j, &q) in row.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            acc += q;
            s2 = j;
            if u < acc {
                break;
            }
        }
        (s2, self.reward(s, a, s2), self.terminal[s2])
    }

    pub fn with_start(mut self, start: usize) -> Result<Self> {
        self.start = start;
        self.validate()?;
        Ok(self)
    }

    pub fn encode(&self, s: usize, enc: &Encoding) -> Tensor {
        enc.encode(self, s)
    }
}

/// Feature map from state ids to network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum Encoding {
    OneHot,
    /// Gaussian bumps on a regular grid of `per_axis` centers per coordinate.
    Rbf { per_axis: usize, width: f64 },
    Coords,
}

impl Encoding {
    pub fn dim(&self, mdp: &TabularMdp) -> usize {
        match self {
            Encoding::OneHot => mdp.n_states,
            Encoding::Rbf { per_axis, .. } => per_axis.pow(mdp.coords[0].len() as u32),
            Encoding::Coords => mdp.coords[0].len(),
        }
    }

    pub fn encode(&self, mdp: &TabularMdp, s: usize) -> Tensor {
        let v = match self {
            Encoding::OneHot => {
                let mut v = vec![0.0; mdp.n_states];
                v[s] = 1.0;
                v
            }
            Encoding::Rbf { per_axis, width } => {
                let c = &mdp.coords[s];
                let k = *per_axis;
                let total = k.pow(c.len() as u32);
                (0..total)
                    .map(|mut idx| {
                        let mut d2 = 0.0;
                        for &x in c {
                            let centre = if k == 1 { 0.5 } else { (idx % k) as f64 / (k - 1) as f64 };
                            idx /= k;
                            d2 += (x - centre).powi(2);
                        }
                        (-d2 / (2.0 * width * width)).exp()
                    })
                    .collect()
            }
            Encoding::Coords => mdp.coords[s].clone(),
        };
        Tensor::vector(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainOptions {
    /// 1: always advance; 2: action 0 moves back, action 1 advances.
    pub actions: usize,
    /// Probability that the opposite move happens.
    pub slip: f64,
}

impl Default for ChainOptions {
    fn default() -> Self {
        ChainOptions { actions: 2, slip: 0.0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChainRewards {
    /// Paid when leaving the last state into the terminal.
    pub goal: f64,
    /// Paid on every other transition.
    pub step: f64,
}

impl Default for ChainRewards {
    fn default() -> Self {
        ChainRewards { goal: 1.0, step: 0.0 }
    }
}

/// `n_states` nonterminal states in a line plus one absorbing terminal
/// (index `n_states`). Start state 0.
pub fn chain_mdp(n_states: usize, rewards: ChainRewards, gamma: f64) -> Result<TabularMdp> {
    chain_mdp_with(n_states, rewards, gamma, ChainOptions::default())
}

pub fn chain_mdp_with(n_states: usize, rewards: ChainRewards, gamma: f64, opts: ChainOptions) -> Result<TabularMdp> {
    if n_states < 2 {
        return Err(CoreError::InvalidMdp("chain needs at least 2 states".into()));
    }
    if !(1..=2).contains(&opts.actions) || !(0.0..=1.0).contains(&opts.slip) {
        return Err(CoreError::InvalidMdp("chain needs 1 or 2 actions and slip in [0, 1]".into()));
    }
    let s_total = n_states + 1;
    let term = n_states;
    let a_n = opts.actions;
    let mut p = vec![0.0; s_total * a_n * s_total];
    let mut r = vec![0.0; s_total * a_n * s_total];
    let idx = |s: usize, a: usize, s2: usize| (s * a_n + a) * s_total + s2;
    for s in 0..n_states {
        for a in 0..a_n {
            let forward = a_n == 1 || a == 1;
            let ahead = s + 1;
            let back = s.saturating_sub(1);
            let (intended, other) = if forward { (ahead, back) } else { (back, ahead) };
            for (dest, q) in [(intended, 1.0 - opts.slip), (other, opts.slip)] {
                if q == 0.0 {
                    continue;
                }
                p[idx(s, a, dest)] += q;
                r[idx(s, a, dest)] = if dest == term { rewards.goal } else { rewards.step };
            }
        }
    }
    for a in 0..a_n {
        p[idx(term, a, term)] = 1.0;
    }
    let mut terminal = vec![false; s_total];
    terminal[term] = true;
    let coords = (0..s_total).map(|s| vec![s as f64 / n_states as f64]).collect();
    TabularMdp::new(s_total, a_n, p, r, terminal, gamma, 0, coords)
}

pub const GRID_UP: usize = 0;
pub const GRID_DOWN: usize = 1;
pub const GRID_LEFT: usize = 2;
pub const GRID_RIGHT: usize = 3;

/// `width × height` cells; start top-left, goal bottom-right (terminal,
/// reward +1 on entry). Moves clip at walls.
pub fn grid_mdp(width: usize, height: usize, gamma: f64) -> Result<TabularMdp> {
    grid_mdp_with(width, height, gamma, 0.0)
}

/// With probability `slip` the move is replaced by a uniformly random one.
pub fn grid_mdp_with(width: usize, height: usize, gamma: f64, slip: f64) -> Result<TabularMdp> {
    if width * height < 2 || width == 0 || height == 0 {
        return Err(CoreError::InvalidMdp("grid needs at least 2 cells".into()));
    }
    if !(0.0..=1.0).contains(&slip) {
        return Err(CoreError::InvalidMdp("slip must be in [0, 1]".into()));
    }
    let n = width * height;
    let goal = n - 1;
    let a_n = 4;
    let mut p = vec![0.0; n * a_n * n];
    let mut r = vec![0.0; n * a_n * n];
    let idx = |s: usize, a: usize, s2: usize| (s * a_n + a) * n + s2;
    let moved = |s: usize, a: usize| {
        let (x, y) = (s % width, s / width);
        let (x, y) = match a {
            GRID_UP => (x, y.saturating_sub(1)),
            GRID_DOWN => (x, (y + 1).min(height - 1)),
            GRID_LEFT => (x.saturating_sub(1), y),
            _ => ((x + 1).min(width - 1), y),
        };
        y * width + x
    };
    for s in 0..n {
        for a in 0..a_n {
            if s == goal {
                p[idx(s, a, s)] = 1.0;
                continue;
            }
            p[idx(s, a, moved(s, a))] += 1.0 - slip;
            for b in 0..a_n {
                p[idx(s, a, moved(s, b))] += slip / a_n as f64;
            }
            r[idx(s, a, goal)] = 1.0;
        }
    }
    let mut terminal = vec![false; n];
    terminal[goal] = true;
    let norm = |v: usize, m: usize| if m > 1 { v as f64 / (m - 1) as f64 } else { 0.0 };
    let coords = (0..n)
        .map(|s| vec![norm(s % width, width), norm(s / width, height)])
        .collect();
    TabularMdp::new(n, a_n, p, r, terminal, gamma, 0, coords)
}

/// Row-stochastic `π(a|s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    n_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions || n_actions == 0 {
            return Err(CoreError::InvalidPolicy("table has the wrong size".into()));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            if row.iter().any(|&q| !(0.0..=1.0).contains(&q)) {
                return Err(CoreError::InvalidPolicy(format!("π(·|{s}) has entries outside [0, 1]")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > STOCHASTIC_TOL {
                return Err(CoreError::InvalidPolicy(format!("π(·|{s}) sums to {total}")));
            }
        }
        Ok(Policy { n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy {
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(CoreError::InvalidPolicy(format!("action {a} out of range")));
            }
            probs[s * n_actions + a] = 1.0;
        }
        Ok(Policy { n_actions, probs })
    }

    /// ε-greedy over `q` (one row per state); ties go to the lowest action.
    pub fn epsilon_greedy(q: &[Vec<f64>], epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(CoreError::InvalidPolicy("ε must lie in [0, 1]".into()));
        }
        let a_n = q.first().map_or(0, |r| r.len());
        let mut probs = Vec::with_capacity(q.len() * a_n);
        for row in q {
            let best = argmax(row);
            probs.extend((0..a_n).map(|a| epsilon / a_n as f64 + if a == best { 1.0 - epsilon } else { 0.0 }));
        }
        Policy::new(q.len(), a_n, probs)
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_states(&self) -> usize {
        self.probs.len() / self.n_actions
    }

    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn sample(&self, s: usize, rng: &mut Rng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = self.probs(s);
        let mut last = 0;
        for (a, &q) in row.iter().enumerate() {
            if q == 0.0 {
                continue;
            }
            acc += q;
            last = a;
            if u < acc {
                return a;
            }
        }
        last
    }
}

/// First index of the maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn check_policy(mdp: &TabularMdp, pi: &Policy) -> Result<()> {
    if pi.n_states() != mdp.n_states || pi.n_actions != mdp.n_actions {
        return Err(CoreError::InvalidPolicy("policy shape does not match the MDP".into()));
    }
    Policy::new(pi.n_states(), pi.n_actions, pi.probs.clone()).map(|_| ())
}

/// Iterate `V ← R_π + γ P_π V` until the sup-norm change is below 1e−10.
pub fn dp_policy_evaluation(mdp: &TabularMdp, pi: &Policy) -> Result<Vec<f64>> {
    check_policy(mdp, pi)?;
    let s_n = mdp.n_states;
    let mut r_pi = vec![0.0; s_n];
    let mut p_pi = vec![0.0; s_n * s_n];
    for s in 0..s_n {
        if mdp.terminal[s] {
            continue;
        }
        for (a, &w) in pi.probs(s).iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            r_pi[s] += w * mdp.expected_reward(s, a);
            for (s2, &q) in mdp.row(s, a).iter().enumerate() {
                p_pi[s * s_n + s2] += w * q;
            }
        }
    }
    let mut v = vec![0.0; s_n];
    for _ in 0..MAX_SWEEPS {
        let mut next = vec![0.0; s_n];
        let mut delta: f64 = 0.0;
        for s in 0..s_n {
            if mdp.terminal[s] {
                continue;
            }
            let row = &p_pi[s * s_n..(s + 1) * s_n];
            let ev: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
            next[s] = r_pi[s] + mdp.gamma * ev;
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < DP_TOL {
            return Ok(v);
        }
    }
    Err(CoreError::NoConvergence(MAX_SWEEPS))
}

/// Bellman-optimality iteration; returns `Q*[s][a]`, zero on terminals.
pub fn value_iteration(mdp: &TabularMdp) -> Result<Vec<Vec<f64>>> {
    mdp.validate()?;
    let (s_n, a_n) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; s_n];
    let mut q = vec![vec![0.0; a_n]; s_n];
    for _ in 0..MAX_SWEEPS {
        let mut delta: f64 = 0.0;
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            if mdp.terminal[s] {
                continue;
            }
            for a in 0..a_n {
                let ev: f64 = mdp.row(s, a).iter().zip(&v).map(|(p, x)| p * x).sum();
                q[s][a] = mdp.expected_reward(s, a) + mdp.gamma * ev;
            }
            next[s] = q[s].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < DP_TOL {
            return Ok(q);
        }
    }
    Err(CoreError::NoConvergence(MAX_SWEEPS))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn two_state_chain_values() {
        let opts = ChainOptions { actions: 1, slip: 0.0 };
        let m = chain_mdp_with(2, ChainRewards::default(), 0.5, opts).unwrap();
        let v = dp_policy_evaluation(&m, &Policy::uniform(3, 1)).unwrap();
        assert!(close(v[1], 1.0, 1e-9) && close(v[0], 0.5, 1e-9) && v[2] == 0.0);

        let m2 = chain_mdp(2, ChainRewards::default(), 0.5).unwrap();
        let q = value_iteration(&m2).unwrap();
        assert!(close(q[0][1], 0.5, 1e-9));
        assert!(close(q[0][0], 0.25, 1e-9));
        assert_eq!(q[2], vec![0.0, 0.0]);
    }

    #[test]
    fn degenerate_rewards_and_discounts() {
        let zero = ChainRewards { goal: 0.0, step: 0.0 };
        let m = chain_mdp(4, zero, 0.9).unwrap();
        let v = dp_policy_evaluation(&m, &Policy::uniform(5, 2)).unwrap();
        assert!(v.iter().all(|&x| x == 0.0));

        let m = chain_mdp_with(3, ChainRewards { goal: 2.0, step: -0.5 }, 0.0, ChainOptions { actions: 2, slip: 0.25 }).unwrap();
        let pi = Policy::uniform(4, 2);
        let v = dp_policy_evaluation(&m, &pi).unwrap();
        for s in 0..3 {
            let imm: f64 = (0..2).map(|a| 0.5 * m.expected_reward(s, a)).sum();
            assert!(close(v[s], imm, 1e-12));
        }
    }

    #[test]
    fn rows_are_stochastic() {
        for m in [
            chain_mdp_with(5, ChainRewards::default(), 0.9, ChainOptions { actions: 2, slip: 0.2 }).unwrap(),
            grid_mdp_with(3, 3, 0.9, 0.1).unwrap(),
        ] {
            for s in 0..m.n_states() {
                for a in 0..m.n_actions() {
                    assert!((m.row(s, a).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
        assert_eq!(grid_mdp(3, 3, 0.9).unwrap().n_states(), 9);
    }

    #[test]
    fn invalid_constructions_rejected() {
        assert!(chain_mdp(1, ChainRewards::default(), 0.9).is_err());
        assert!(chain_mdp(3, ChainRewards::default(), 1.5).is_err());
        // back-and-forth forever is possible without discount
        assert!(chain_mdp(3, ChainRewards::default(), 1.0).is_err());
        assert!(chain_mdp_with(3, ChainRewards::default(), 1.0, ChainOptions { actions: 1, slip: 0.0 }).is_ok());
        assert!(Policy::new(1, 2, vec![0.7, 0.7]).is_err());
        let m = chain_mdp(2, ChainRewards::default(), 0.9).unwrap();
        assert!(dp_policy_evaluation(&m, &Policy::uniform(2, 2)).is_err());
    }

    #[test]
    fn encodings() {
        let m = grid_mdp(3, 2, 0.9).unwrap();
        assert_eq!(m.encode(4, &Encoding::Coords).data(), &[0.5, 1.0]);
        let oh = m.encode(2, &Encoding::OneHot);
        assert_eq!(oh.data().iter().sum::<f64>(), 1.0);
        assert_eq!(oh.data()[2], 1.0);
        let rbf = Encoding::Rbf { per_axis: 3, width: 0.5 };
        assert_eq!(rbf.dim(&m), 9);
        let x = m.encode(0, &rbf);
        assert_eq!(x.data()[0], 1.0);
    }

    #[test]
    fn sampling_follows_support() {
        let m = grid_mdp_with(3, 3, 0.9, 0.3).unwrap();
        let mut r = crate::rng::seeded(4);
        for _ in 0..2000 {
            let s = r.random_range(0..8);
            let a = r.random_range(0..4);
            let (s2, _, done) = m.sample_step(s, a, &mut r);
            assert!(m.row(s, a)[s2] > 0.0);
            assert_eq!(done, s2 == 8);
        }
    }
}
