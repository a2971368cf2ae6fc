//! Simulated environments and ground-truth value oracles.

mod oracle;
mod toy;

use alloc::vec::Vec;

pub use oracle::{
    ground_truth_value, solve_toy_policy, ConstantPolicy, GridPolicy, OracleEstimate, Policy, ThresholdPolicy,
};
pub use toy::{toy_transition, EnvState, ToyEnv, ToyEnvConfig, TOY_ENV_NAME};

use crate::Result;

/// Result of one environment step.
#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub next_state: Vec<f64>,
    pub reward: f64,
    /// The episode reached a terminal state.
    pub terminal: bool,
    /// The episode hit the step cap without terminating.
    pub truncated: bool,
}

impl Step {
    pub fn episode_over(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A continuous-control environment with vector states and actions.
pub trait Environment {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    /// Starts a new episode and returns the initial state.
    fn reset(&mut self) -> Vec<f64>;
    fn observation(&self) -> Vec<f64>;
    /// Fails with a usage error once the episode is over.
    fn step(&mut self, action: &[f64]) -> Result<Step>;
}
