//! Optimizers, bootstrap targets, losses and training loops.

pub mod control;
pub mod losses;
pub mod optim;
pub mod reinforce;
pub mod returns;
pub mod tabular;
pub mod targets;
pub mod train;

pub use losses::{
    ddqn_loss, distill_losses, distill_targets, ql_loss, q_target, q_values, q_values_batch, DistillLosses,
    DistillTargets, Expert, ModelExpert, TabularExpert,
};
pub use optim::{Optimizer, OptimizerKind};
pub use reinforce::{episode_returns, reinforce_gradient, reinforce_step, reinforce_surrogate, EpisodeStep};
pub use returns::{
    lambda_returns, lambda_weights, td0_target, td_errors, LambdaTargetSet, ModelValue, StateValue, TdErrorRecord,
};
pub use tabular::tabular_td0;
pub use targets::{TargetKind, TargetRule};
pub use train::{
    pointwise_td_loss, q_learning_targets, train, BufferLearner, BufferObjective, DistillKind, Learner, LossRow,
    Schedule, SupervisedLearner, SupervisedTask,
};
pub use control::{evaluate_agent, model_input, AgentKind, DqnAgent, DqnConfig, EvalStats, ReinforceAgent};
