//! DDPG actor-critic learner with a pluggable target estimator.

mod actor_critic;
mod replay;

pub use actor_critic::{explore_action, ActorCritic, AgentConfig, CriticReduction, StepReport};
pub use replay::{Batch, ReplayBuffer, Transition};
