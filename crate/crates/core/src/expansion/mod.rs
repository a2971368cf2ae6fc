//! Model-based value-expansion targets: MVE, DVE, STEVE, the alpha confidence
//! lower bound and RAVE.

mod candidates;
mod compute;
mod interpolate;
mod trajectory;

pub use candidates::{build_candidates, dve_rollout, imagine, CandidateMatrix, Origin};
pub use compute::{compute_targets, td0_targets, Diagnostics, Targets};
pub use interpolate::{adaptive_alpha, alpha_from_error, clb, interpolation_weights, rave_target, steve_target};
pub use trajectory::{continuation_mask, expansion_value, mve_target, ImaginedTrajectory};

use alloc::format;

use crate::{Error, Result};

/// Which target estimator the critic regresses to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    /// One-step TD target of DDPG.
    Td0,
    /// Fixed-horizon expansion through a deterministic model.
    Mve,
    /// Inverse-variance interpolation of expansion targets over horizons.
    Steve,
    /// STEVE over per-horizon confidence lower bounds of sampled rollouts.
    Rave,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [Self::Td0, Self::Mve, Self::Steve, Self::Rave];

    pub fn name(self) -> &'static str {
        match self {
            Self::Td0 => "td0",
            Self::Mve => "mve",
            Self::Steve => "steve",
            Self::Rave => "rave",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(name) || (name.eq_ignore_ascii_case("ddpg") && *k == Self::Td0))
            .ok_or_else(|| Error::Config(format!("unknown estimator `{name}`")))
    }

    /// Whether the estimator rolls a learned model forward.
    pub fn uses_model(self) -> bool {
        self != Self::Td0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpansionConfig {
    /// Maximum rollout horizon `H_max`.
    pub horizon: usize,
    /// Ensemble size `N` of models and target critics.
    pub members: usize,
    pub alpha: f64,
    /// Scale of the squared model error in the adaptive alpha.
    pub z: f64,
    pub gamma: f64,
    pub estimator: EstimatorKind,
    pub adaptive_alpha: bool,
    /// `epsilon_omega` added to each horizon variance before inversion.
    pub weight_floor: f64,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            members: 4,
            alpha: 1.5,
            z: 1.0,
            gamma: 0.99,
            estimator: EstimatorKind::Rave,
            adaptive_alpha: true,
            weight_floor: 1e-8,
        }
    }
}

impl ExpansionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.members == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.z > 0.0 && self.z.is_finite()) {
            return Err(Error::Config(format!("Z must be finite and > 0, got {}", self.z)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.weight_floor > 0.0 && self.weight_floor.is_finite()) {
            return Err(Error::Config(format!(
                "weight floor must be finite and > 0, got {}",
                self.weight_floor
            )));
        }
        Ok(())
    }
}
