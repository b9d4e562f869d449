//! Table-based TD(0) policy evaluation.

use crate::env::{Policy, TabularMdp};
use crate::error::{CoreError, Result};
use crate::rng;

/// `V(s) ← V(s) − α(V(s) − (r + γV(s′)))` along sampled episodes from the
/// start state.
pub fn tabular_td0(mdp: &TabularMdp, pi: &Policy, alpha: f64, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoreError::InvalidArgument(format!("step size {alpha} outside [0, 1]")));
    }
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(CoreError::InvalidPolicy("policy shape does not match the MDP".into()));
    }
    let mut r = rng::stream(seed, "tabular-td0");
    let mut v = vec![0.0; mdp.n_states()];
    for _ in 0..episodes {
        let mut s = mdp.start();
        let mut steps = 0;
        while !mdp.is_terminal(s) {
            let a = pi.sample(s, &mut r);
            let (s2, reward, done) = mdp.sample_step(s, a, &mut r);
            let boot = if done { 0.0 } else { v[s2] };
            let target = reward + mdp.gamma() * boot;
            v[s] -= alpha * (v[s] - target);
            s = s2;
            steps += 1;
            if steps > crate::env::buffer::MAX_EPISODE_STEPS {
                return Err(CoreError::InvalidMdp("episode did not terminate".into()));
            }
        }
    }
    Ok(v)
}
