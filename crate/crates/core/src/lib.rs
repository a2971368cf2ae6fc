//! Model-based value expansion on top of a DDPG actor-critic.
//!
//! The crate is `no_std` (it needs `alloc`) and contains every numerical
//! piece of the lab:
//!
//! * [`nn`]: a small MLP kernel with hand-written backprop, Adam and losses.
//! * [`env`]: the 1-D stochastic toy environment and a Monte-Carlo value oracle.
//! * [`dynamics`]: deterministic / probabilistic ensembles of transition,
//!   reward and termination models.
//! * [`expansion`]: MVE, DVE, STEVE, α-CLB and RAVE target estimators.
//! * [`agent`]: replay buffer and the actor-critic learner.
//!
//! IO, configuration files, the CLI and concurrency live in the `rave-lab`
//! companion crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod agent;
pub mod dynamics;
pub mod env;
mod error;
pub mod expansion;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
