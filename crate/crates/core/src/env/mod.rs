//! Desk-scale MDPs, datasets and replay buffers.

pub mod buffer;
pub mod glyphs;
pub mod masked;
pub mod tabular;

pub use buffer::{make_expert_buffer, mc_return, mc_returns, rollout, Obs, ReplayBuffer, Transition};
pub use glyphs::{glyph_generate, GlyphDataset};
pub use masked::{MaskedEnvConfig, MaskedImageEnv, StepResult};
pub use tabular::{
    argmax, chain_mdp, chain_mdp_with, dp_policy_evaluation, grid_mdp, grid_mdp_with, value_iteration, ChainOptions,
    ChainRewards, Encoding, Policy, TabularMdp,
};
