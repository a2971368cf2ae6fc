//! Learned environment model: transition, reward and termination networks,
//! each replicated `N` times, in deterministic or probabilistic form.

mod ensemble;
mod scaler;
mod stats;

pub use ensemble::{DynamicsConfig, DynamicsEnsemble, MemberLoss, ModelMode, Scalers, TerminationSampling};
pub use scaler::Scaler;
pub use stats::ensemble_stats;
