//! Transitions, replay buffers and expert data collection.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use tdi_autodiff::{read_tnsr, write_tnsr, Tensor};

use super::tabular::{Encoding, Policy, TabularMdp};
use crate::error::{CoreError, Result};
use crate::rng::{self, Rng};

/// A state: a stable id (tabular state or image index) and its features.
#[derive(Clone, Debug, PartialEq)]
pub struct Obs {
    pub id: usize,
    pub x: Arc<Tensor>,
}

impl Obs {
    pub fn new(id: usize, x: Tensor) -> Self {
        Obs { id, x: Arc::new(x) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Obs,
    pub action: usize,
    pub reward: f64,
    pub next_state: Obs,
    pub done: bool,
    pub trajectory: u64,
    pub step: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer {
    items: VecDeque<Transition>,
    capacity: usize,
}

#[derive(Serialize, Deserialize)]
struct BufferManifest {
    count: usize,
    capacity: usize,
    feature_shape: Vec<usize>,
    next_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    trajectory_id: u64,
    step: usize,
    state_id_or_image_index: usize,
    action: usize,
    reward: f64,
    done: u8,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            items: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Append; the oldest transition is evicted when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn get(&self, i: usize) -> Result<&Transition> {
        self.items.get(i).ok_or(CoreError::OutOfRange { index: i, len: self.len() })
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Contiguous index ranges sharing a trajectory id, in buffer order.
    pub fn trajectories(&self) -> Vec<Range<usize>> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.items.len() {
            if i == self.items.len() || self.items[i].trajectory != self.items[start].trajectory {
                if i > start {
                    out.push(start..i);
                }
                start = i;
            }
        }
        out
    }

    /// The trajectory range containing index `i`.
    pub fn trajectory_of(&self, i: usize) -> Result<Range<usize>> {
        let id = self.get(i)?.trajectory;
        let mut lo = i;
        while lo > 0 && self.items[lo - 1].trajectory == id {
            lo -= 1;
        }
        let mut hi = i + 1;
        while hi < self.items.len() && self.items[hi].trajectory == id {
            hi += 1;
        }
        Ok(lo..hi)
    }

    pub fn slice(&self, r: Range<usize>) -> Vec<Transition> {
        self.items.range(r).cloned().collect()
    }

    /// Uniform minibatch without replacement.
    pub fn sample_indices(&self, size: usize, rng: &mut Rng) -> Result<Vec<usize>> {
        if size == 0 || size > self.len() {
            return Err(CoreError::InsufficientData(format!(
                "minibatch of {size} from {} transitions",
                self.len()
            )));
        }
        Ok(sample(rng, self.len(), size).into_vec())
    }

    /// Check that step indices increase by one within every trajectory.
    pub fn check_contiguous(&self) -> bool {
        self.trajectories().iter().all(|r| {
            (r.start + 1..r.end).all(|i| self.items[i].step == self.items[i - 1].step + 1)
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        for t in &self.items {
            w.serialize(CsvRow {
                trajectory_id: t.trajectory,
                step: t.step,
                state_id_or_image_index: t.state.id,
                action: t.action,
                reward: t.reward,
                done: u8::from(t.done),
            })
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `buffer.csv`, `states.tnsr`, `next_states.tnsr`, `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        if self.is_empty() {
            return Err(CoreError::InsufficientData("cannot save an empty buffer".into()));
        }
        std::fs::create_dir_all(dir)?;
        self.write_csv(&dir.join("buffer.csv"))?;
        let stack = |f: &dyn Fn(&Transition) -> &Tensor| -> Result<Tensor> {
            let refs: Vec<&Tensor> = self.items.iter().map(f).collect();
            Ok(Tensor::stack(&refs)?)
        };
        write_tnsr(
            BufWriter::new(File::create(dir.join("states.tnsr"))?),
            &stack(&|t| &t.state.x)?,
        )?;
        write_tnsr(
            BufWriter::new(File::create(dir.join("next_states.tnsr"))?),
            &stack(&|t| &t.next_state.x)?,
        )?;
        let m = BufferManifest {
            count: self.len(),
            capacity: self.capacity,
            feature_shape: self.items[0].state.x.shape().to_vec(),
            next_ids: self.items.iter().map(|t| t.next_state.id).collect(),
        };
        serde_json::to_writer_pretty(BufWriter::new(File::create(dir.join("manifest.json"))?), &m)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m: BufferManifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
        let states = read_tnsr(BufReader::new(File::open(dir.join("states.tnsr"))?))?;
        let nexts = read_tnsr(BufReader::new(File::open(dir.join("next_states.tnsr"))?))?;
        let per: usize = m.feature_shape.iter().product();
        let mut rdr = csv::Reader::from_path(dir.join("buffer.csv")).map_err(csv_err)?;
        let mut buf = ReplayBuffer::new(m.capacity);
        for (i, row) in rdr.deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(csv_err)?;
            if i >= m.count || m.next_ids.len() != m.count {
                return Err(CoreError::InvalidArgument("buffer csv disagrees with manifest".into()));
            }
            let feat = |t: &Tensor| Tensor::new(m.feature_shape.clone(), t.data()[i * per..(i + 1) * per].to_vec());
            buf.push(Transition {
                state: Obs::new(row.state_id_or_image_index, feat(&states)?),
                action: row.action,
                reward: row.reward,
                next_state: Obs::new(m.next_ids[i], feat(&nexts)?),
                done: row.done != 0,
                trajectory: row.trajectory_id,
                step: row.step,
            });
        }
        if buf.len() != m.count {
            return Err(CoreError::InvalidArgument("buffer csv disagrees with manifest".into()));
        }
        Ok(buf)
    }
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Io(std::io::Error::other(e))
}

/// Guard against policies that never reach a terminal state.
pub const MAX_EPISODE_STEPS: usize = 100_000;

/// Roll out `policy` from the start state until termination.
pub fn rollout(
    mdp: &TabularMdp,
    policy: &Policy,
    encoding: &Encoding,
    trajectory: u64,
    rng: &mut Rng,
) -> Result<Vec<Transition>> {
    let mut s = mdp.start();
    let mut out = Vec::new();
    let mut x = Obs::new(s, mdp.encode(s, encoding));
    while !mdp.is_terminal(s) {
        if out.len() >= MAX_EPISODE_STEPS {
            return Err(CoreError::InvalidMdp("episode did not terminate".into()));
        }
        let a = policy.sample(s, rng);
        let (s2, r, done) = mdp.sample_step(s, a, rng);
        let x2 = Obs::new(s2, mdp.encode(s2, encoding));
        out.push(Transition {
            state: x,
            action: a,
            reward: r,
            next_state: x2.clone(),
            done,
            trajectory,
            step: out.len(),
        });
        s = s2;
        x = x2;
    }
    Ok(out)
}

/// ε-greedy rollouts from `q_star` until at least `n_transitions` have been
/// collected. Whole episodes are kept, so the buffer may run slightly over.
pub fn make_expert_buffer(
    mdp: &TabularMdp,
    q_star: &[Vec<f64>],
    epsilon: f64,
    n_transitions: usize,
    seed: u64,
    encoding: &Encoding,
) -> Result<ReplayBuffer> {
    if n_transitions < 1 {
        return Err(CoreError::InvalidArgument("n_transitions must be at least 1".into()));
    }
    if q_star.len() != mdp.n_states() || q_star.iter().any(|r| r.len() != mdp.n_actions()) {
        return Err(CoreError::InvalidArgument("Q table shape does not match the MDP".into()));
    }
    let policy = Policy::epsilon_greedy(q_star, epsilon)?;
    let mut rng = rng::stream(seed, "expert-buffer");
    let mut collected = Vec::new();
    let mut traj = 0u64;
    while collected.len() < n_transitions {
        collected.extend(rollout(mdp, &policy, encoding, traj, &mut rng)?);
        traj += 1;
    }
    let mut buf = ReplayBuffer::new(collected.len());
    for t in collected {
        buf.push(t);
    }
    Ok(buf)
}

/// Discounted return from step `t` of a terminated trajectory.
pub fn mc_return(trajectory: &[Transition], t: usize, gamma: f64) -> Result<f64> {
    let last = trajectory
        .last()
        .ok_or(CoreError::InsufficientData("empty trajectory".into()))?;
    if !last.done {
        return Err(CoreError::Unterminated(last.trajectory));
    }
    if t >= trajectory.len() {
        return Err(CoreError::OutOfRange { index: t, len: trajectory.len() });
    }
    Ok(trajectory[t..].iter().rev().fold(0.0, |g, tr| tr.reward + gamma * g))
}

/// Returns for every step of a terminated trajectory.
pub fn mc_returns(trajectory: &[Transition], gamma: f64) -> Result<Vec<f64>> {
    mc_return(trajectory, 0, gamma)?;
    let mut out = vec![0.0; trajectory.len()];
    let mut g = 0.0;
    for (i, tr) in trajectory.iter().enumerate().rev() {
        g = tr.reward + gamma * g;
        out[i] = g;
    }
    Ok(out)
}
