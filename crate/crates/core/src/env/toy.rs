use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Environment, Step};
use crate::rng::{self, LabRng, RngState};
use crate::{Error, Result};

pub const TOY_ENV_NAME: &str = "toy";

/// Parameters of the 1-D toy task.
///
/// The agent moves one unit left or right per step, plus `noise` times a
/// standard normal draw. Leaving `[-bound, bound]` ends the episode.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEnvConfig {
    /// Noise scale `k`; 0 gives deterministic transitions.
    pub noise: f64,
    pub step_penalty: f64,
    /// Open interval that pays `trap_reward` when landed in.
    pub trap: (f64, f64),
    pub trap_reward: f64,
    /// Paid when the episode ends beyond `+bound`.
    pub right_reward: f64,
    /// Paid when the episode ends beyond `-bound`.
    pub left_reward: f64,
    pub bound: f64,
    pub max_steps: usize,
}

impl Default for ToyEnvConfig {
    fn default() -> Self {
        Self {
            noise: 0.0,
            step_penalty: -100.0,
            trap: (1.01, 1.011),
            trap_reward: -20000.0,
            right_reward: 1000.0,
            left_reward: 984.0,
            bound: 5.0,
            max_steps: 1000,
        }
    }
}

impl ToyEnvConfig {
    pub fn with_noise(noise: f64) -> Self {
        Self {
            noise,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(Error::Config(format!("noise scale must be >= 0, got {}", self.noise)));
        }
        if self.bound.is_nan() || self.bound <= 0.0 {
            return Err(Error::Config(format!("bound must be positive, got {}", self.bound)));
        }
        let (lo, hi) = self.trap;
        if !(lo < hi && lo > -self.bound && hi < self.bound) {
            return Err(Error::Config(format!(
                "trap interval ({lo}, {hi}) must be nonempty and inside (-{b}, {b})",
                b = self.bound
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be positive".into()));
        }
        Ok(())
    }
}

/// One transition of the toy task for a given standard-normal draw `eta`.
///
/// Returns `(next position, reward, terminal)`. A zero action moves right.
/// Terminal rewards replace the step penalty.
pub fn toy_transition(cfg: &ToyEnvConfig, position: f64, action: f64, eta: f64) -> (f64, f64, bool) {
    let direction = if action < 0.0 { -1.0 } else { 1.0 };
    let next = position + direction + cfg.noise * eta;
    if next > cfg.bound {
        (next, cfg.right_reward, true)
    } else if next < -cfg.bound {
        (next, cfg.left_reward, true)
    } else if next > cfg.trap.0 && next < cfg.trap.1 {
        (next, cfg.trap_reward, false)
    } else {
        (next, cfg.step_penalty, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub position: f64,
    pub done: bool,
    pub truncated: bool,
    pub steps: usize,
}

impl EnvState {
    fn start(position: f64) -> Self {
        Self {
            position,
            done: false,
            truncated: false,
            steps: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyEnv {
    cfg: ToyEnvConfig,
    rng: LabRng,
    state: EnvState,
}

impl ToyEnv {
    pub fn new(cfg: ToyEnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: rng::stream(seed, 0),
            state: EnvState::start(0.0),
        })
    }

    /// Rebuilds an environment from a saved state and noise generator.
    pub fn restore(cfg: ToyEnvConfig, state: EnvState, rng: RngState) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            rng: rng.restore(),
            state,
        })
    }

    pub fn config(&self) -> &ToyEnvConfig {
        &self.cfg
    }

    pub fn state(&self) -> EnvState {
        self.state
    }

    pub fn rng_state(&self) -> RngState {
        RngState::capture(&self.rng)
    }

    /// Reseeds the noise and starts over from `s = 0`.
    pub fn reset_seeded(&mut self, seed: u64) -> EnvState {
        self.rng = rng::stream(seed, 0);
        self.reset_at(0.0)
    }

    /// Starts an episode at an arbitrary position (used by the oracle).
    pub fn reset_at(&mut self, position: f64) -> EnvState {
        self.state = EnvState::start(position);
        self.state
    }

    /// Advances one step with action `action`; returns the new state, reward
    /// and terminal flag.
    pub fn step_scalar(&mut self, action: f64) -> Result<(EnvState, f64, bool)> {
        if self.state.done || self.state.truncated {
            return Err(Error::Usage("step called on a finished episode; reset first".into()));
        }
        let eta = if self.cfg.noise > 0.0 {
            rng::standard_normal(&mut self.rng)
        } else {
            0.0
        };
        let (next, reward, terminal) = toy_transition(&self.cfg, self.state.position, action, eta);
        self.state.position = next;
        self.state.steps += 1;
        self.state.done = terminal;
        self.state.truncated = !terminal && self.state.steps >= self.cfg.max_steps;
        Ok((self.state, reward, terminal))
    }
}

impl Environment for ToyEnv {
    fn state_dim(&self) -> usize {
        1
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        self.reset_at(0.0);
        vec![0.0]
    }

    fn observation(&self) -> Vec<f64> {
        vec![self.state.position]
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != 1 {
            return Err(Error::Dimension {
                context: "ToyEnv::step action",
                expected: 1,
                found: action.len(),
            });
        }
        let (state, reward, terminal) = self.step_scalar(action[0])?;
        Ok(Step {
            next_state: vec![state.position],
            reward,
            terminal,
            truncated: state.truncated,
        })
    }
}
