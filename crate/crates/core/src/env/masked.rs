//! Classification by exploration: the agent sees only the windows it has
//! visited and must name the class.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tdi_autodiff::Tensor;

use super::glyphs::GlyphDataset;
use crate::error::{CoreError, Result};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const N_MOVES: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaskedEnvConfig {
    pub window: usize,
    pub step: usize,
    pub max_steps: usize,
}

impl Default for MaskedEnvConfig {
    fn default() -> Self {
        MaskedEnvConfig {
            window: 8,
            step: 8,
            max_steps: 20,
        }
    }
}

#[derive(Clone, Debug)]
struct Episode {
    index: usize,
    x: usize,
    y: usize,
    steps: usize,
    revealed: Vec<bool>,
    done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub obs: Tensor,
    pub reward: f64,
    pub done: bool,
}

#[derive(Clone, Debug)]
pub struct MaskedImageEnv {
    data: Arc<GlyphDataset>,
    cfg: MaskedEnvConfig,
    episode: Option<Episode>,
}

impl MaskedImageEnv {
    pub fn new(data: Arc<GlyphDataset>, cfg: MaskedEnvConfig) -> Result<Self> {
        if cfg.window == 0 || cfg.window > data.width || cfg.window > data.height {
            return Err(CoreError::InvalidArgument("window must fit inside the image".into()));
        }
        if cfg.step == 0 || cfg.max_steps == 0 {
            return Err(CoreError::InvalidArgument("move step and max steps must be positive".into()));
        }
        Ok(MaskedImageEnv {
            data,
            cfg,
            episode: None,
        })
    }

    pub fn n_actions(&self) -> usize {
        N_MOVES + self.data.n_classes
    }

    pub fn dataset(&self) -> &Arc<GlyphDataset> {
        &self.data
    }

    pub fn config(&self) -> &MaskedEnvConfig {
        &self.cfg
    }

    /// Observation shape `[1, H, W]`.
    pub fn obs_shape(&self) -> [usize; 3] {
        [1, self.data.height, self.data.width]
    }

    pub fn reset(&mut self, index: usize) -> Result<Tensor> {
        self.data.label(index)?;
        let (w, h, win) = (self.data.width, self.data.height, self.cfg.window);
        let mut ep = Episode {
            index,
            x: (w - win) / 2,
            y: (h - win) / 2,
            steps: 0,
            revealed: vec![false; w * h],
            done: false,
        };
        self.reveal(&mut ep);
        self.episode = Some(ep);
        self.observation()
    }

    fn reveal(&self, ep: &mut Episode) {
        let w = self.data.width;
        for yy in ep.y..ep.y + self.cfg.window {
            for xx in ep.x..ep.x + self.cfg.window {
                ep.revealed[yy * w + xx] = true;
            }
        }
    }

    fn current(&self) -> Result<&Episode> {
        self.episode
            .as_ref()
            .ok_or(CoreError::InvalidArgument("reset before stepping".into()))
    }

    /// Window origin `(x, y)`.
    pub fn position(&self) -> Result<(usize, usize)> {
        let ep = self.current()?;
        Ok((ep.x, ep.y))
    }

    pub fn steps(&self) -> Result<usize> {
        Ok(self.current()?.steps)
    }

    pub fn image_index(&self) -> Result<usize> {
        Ok(self.current()?.index)
    }

    pub fn revealed_count(&self) -> Result<usize> {
        Ok(self.current()?.revealed.iter().filter(|&&r| r).count())
    }

    pub fn is_done(&self) -> bool {
        self.episode.as_ref().is_some_and(|e| e.done)
    }

    pub fn observation(&self) -> Result<Tensor> {
        let ep = self.current()?;
        let px = self.data.pixels(ep.index)?;
        let data = px
            .iter()
            .zip(&ep.revealed)
            .map(|(&v, &r)| if r { v } else { 0.0 })
            .collect();
        Ok(Tensor::new(self.obs_shape().to_vec(), data)?)
    }

    pub fn step(&mut self, action: usize) -> Result<StepResult> {
        let n_actions = self.n_actions();
        let label = self.data.label(self.current()?.index)?;
        let (max_x, max_y) = (self.data.width - self.cfg.window, self.data.height - self.cfg.window);
        let (step, max_steps) = (self.cfg.step, self.cfg.max_steps);
        let mut ep = self.episode.take().ok_or(CoreError::InvalidArgument("reset before stepping".into()))?;
        if ep.done {
            self.episode = Some(ep);
            return Err(CoreError::EpisodeFinished);
        }
        if action >= n_actions {
            self.episode = Some(ep);
            return Err(CoreError::InvalidArgument(format!("action {action} ≥ {n_actions}")));
        }
        let mut reward = 0.0;
        match action {
            UP => ep.y = ep.y.saturating_sub(step),
            DOWN => ep.y = (ep.y + step).min(max_y),
            LEFT => ep.x = ep.x.saturating_sub(step),
            RIGHT => ep.x = (ep.x + step).min(max_x),
            a => {
                if a - N_MOVES == label {
                    reward = 1.0;
                    ep.done = true;
                }
            }
        }
        self.reveal(&mut ep);
        ep.steps += 1;
        if ep.steps >= max_steps {
            ep.done = true;
        }
        let done = ep.done;
        self.episode = Some(ep);
        Ok(StepResult {
            obs: self.observation()?,
            reward,
            done,
        })
    }
}
