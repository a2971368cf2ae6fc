//! Run configuration: defaults, `key = value` files, command-line overrides
//! and validation.

use std::path::{Path, PathBuf};

use clap::Args;
use rave_core::agent::{AgentConfig, CriticReduction};
use rave_core::dynamics::{DynamicsConfig, ModelMode, TerminationSampling};
use rave_core::env::{ToyEnvConfig, TOY_ENV_NAME};
use rave_core::expansion::{EstimatorKind, ExpansionConfig};
use rave_core::nn::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Environment variable that relocates relative output directories.
pub const OUTPUT_ROOT_VAR: &str = "RAVE_OUTPUT_ROOT";

/// Every knob of an experiment. Defaults are the toy-scale settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: String,
    /// Transition noise scale `k` of the toy environment.
    pub noise: f64,
    /// One of `td0` (alias `ddpg`), `mve`, `steve`, `rave`.
    pub estimator: String,
    pub gamma: f64,
    pub horizon: usize,
    pub members: usize,
    pub alpha: f64,
    pub z: f64,
    pub adaptive_alpha: bool,
    pub weight_floor: f64,
    /// `clip` or `threshold`.
    pub termination_sampling: String,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub dynamics_lr: f64,
    pub epsilon: f64,
    pub exploration_std: f64,
    pub tau: f64,
    /// Bound of the uniform draw for the policy's output layer; 0 keeps the
    /// fan-in initialisation.
    pub policy_output_init: f64,
    pub hidden_width: usize,
    pub model_width: usize,
    /// Fully connected layers of the policy and critic networks.
    pub layers: usize,
    pub transition_layers: usize,
    pub model_layers: usize,
    /// Critic reduction for the policy gradient: `mean` or `first`.
    pub actor_signal: String,
    /// Critic read for the start-state estimates: `first` or `mean`.
    pub eval_critic: String,
    pub warmup_frames: usize,
    /// Dynamics gradient steps on the warmup data before learning starts.
    pub pretrain_steps: usize,
    pub total_steps: usize,
    pub eval_period: usize,
    pub max_episode_steps: usize,
    pub workers: usize,
    /// Learner steps between policy snapshots published to workers.
    pub snapshot_period: usize,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub oracle_episodes: usize,
    pub oracle_seed: u64,
    /// Grid spacing of the value iteration behind the oracle policy.
    pub oracle_grid: f64,
    pub save_checkpoint: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: TOY_ENV_NAME.into(),
            noise: 0.0,
            estimator: "rave".into(),
            gamma: 0.99,
            horizon: 3,
            members: 4,
            alpha: 1.5,
            z: 1.0,
            adaptive_alpha: true,
            weight_floor: 1e-8,
            termination_sampling: "clip".into(),
            batch_size: 128,
            replay_capacity: 100_000,
            policy_lr: 3e-4,
            critic_lr: 3e-4,
            dynamics_lr: 3e-4,
            epsilon: 0.05,
            exploration_std: 0.1,
            tau: 0.001,
            policy_output_init: 3e-3,
            hidden_width: 32,
            model_width: 16,
            layers: 4,
            transition_layers: 8,
            model_layers: 4,
            actor_signal: "mean".into(),
            eval_critic: "first".into(),
            warmup_frames: 1000,
            pretrain_steps: 1000,
            total_steps: 100_000,
            eval_period: 1000,
            max_episode_steps: 1000,
            workers: 1,
            snapshot_period: 100,
            seeds: vec![0, 1, 2, 3],
            output_dir: PathBuf::from("runs"),
            oracle_episodes: 100_000,
            oracle_seed: 20_200_202,
            oracle_grid: 0.01,
            save_checkpoint: true,
        }
    }
}

/// Command-line mirror of [`RunConfig`]; every flag is optional and wins
/// over the configuration file.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct Overrides {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub env: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimator: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub members: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adaptive_alpha: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_floor: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination_sampling: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replay_capacity: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dynamics_lr: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exploration_std: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy_output_init: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_layers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor_signal: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_critic: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_frames: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pretrain_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub total_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_period: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_episode_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshot_period: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_episodes: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_grid: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub save_checkpoint: Option<bool>,
}

fn merge(base: &mut toml::Table, layer: toml::Table) {
    for (k, v) in layer {
        base.insert(k, v);
    }
}

impl RunConfig {
    /// Defaults, then `file` (if any), then `overrides`; validated.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut table = toml::Table::try_from(RunConfig::default()).map_err(|e| LabError::Config(e.to_string()))?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(LabError::io(path))?;
            let layer: toml::Table = text.parse().map_err(|e: toml::de::Error| LabError::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?;
            merge(&mut table, layer);
        }
        let layer = toml::Table::try_from(overrides).map_err(|e| LabError::Config(e.to_string()))?;
        merge(&mut table, layer);
        let config: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| LabError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// The fully resolved configuration in the file format `resolve` reads.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    pub fn estimator_kind(&self) -> Result<EstimatorKind> {
        Ok(EstimatorKind::from_name(&self.estimator)?)
    }

    /// Model family used by the estimator: none for TD0, a single
    /// deterministic model for MVE, a deterministic ensemble for STEVE and a
    /// probabilistic ensemble for RAVE.
    pub fn model(&self) -> Result<Option<(ModelMode, usize)>> {
        Ok(match self.estimator_kind()? {
            EstimatorKind::Td0 => None,
            EstimatorKind::Mve => Some((ModelMode::Deterministic, 1)),
            EstimatorKind::Steve => Some((ModelMode::Deterministic, self.members)),
            EstimatorKind::Rave => Some((ModelMode::Probabilistic, self.members)),
        })
    }

    /// Critic ensemble size: `N` for the interpolating estimators, one
    /// otherwise.
    pub fn critics(&self) -> Result<usize> {
        Ok(match self.estimator_kind()? {
            EstimatorKind::Steve | EstimatorKind::Rave => self.members,
            EstimatorKind::Td0 | EstimatorKind::Mve => 1,
        })
    }

    pub fn expansion(&self) -> Result<ExpansionConfig> {
        Ok(ExpansionConfig {
            horizon: self.horizon,
            members: self.model()?.map_or(1, |m| m.1),
            alpha: self.alpha,
            z: self.z,
            gamma: self.gamma,
            estimator: self.estimator_kind()?,
            adaptive_alpha: self.adaptive_alpha,
            weight_floor: self.weight_floor,
        })
    }

    pub fn agent(&self) -> Result<AgentConfig> {
        let mut cfg = AgentConfig::new(1, 1, self.critics()?);
        cfg.hidden_width = self.hidden_width;
        cfg.layers = self.layers;
        cfg.epsilon = self.epsilon;
        cfg.noise_std = self.exploration_std;
        cfg.tau = self.tau;
        cfg.policy_output_init = (self.policy_output_init != 0.0).then_some(self.policy_output_init);
        cfg.actor_optimizer = AdamConfig {
            learning_rate: self.policy_lr,
            ..AdamConfig::default()
        };
        cfg.critic_optimizer = AdamConfig {
            learning_rate: self.critic_lr,
            ..AdamConfig::default()
        };
        cfg.actor_signal = match self.actor_signal.as_str() {
            "mean" => CriticReduction::Mean,
            "first" => CriticReduction::First,
            other => {
                return Err(LabError::Config(format!(
                    "actor_signal must be mean or first, got `{other}`"
                )))
            }
        };
        Ok(cfg)
    }

    pub fn dynamics(&self) -> Result<Option<DynamicsConfig>> {
        let Some((mode, members)) = self.model()? else {
            return Ok(None);
        };
        let mut cfg = DynamicsConfig::new(mode, members, 1, 1);
        cfg.hidden_width = self.model_width;
        cfg.transition_layers = self.transition_layers;
        cfg.model_layers = self.model_layers;
        cfg.optimizer = AdamConfig {
            learning_rate: self.dynamics_lr,
            ..AdamConfig::default()
        };
        cfg.termination_sampling = match self.termination_sampling.as_str() {
            "clip" => TerminationSampling::Clip,
            "threshold" => TerminationSampling::Threshold,
            other => {
                return Err(LabError::Config(format!(
                    "termination_sampling must be clip or threshold, got `{other}`"
                )))
            }
        };
        Ok(Some(cfg))
    }

    pub fn toy(&self) -> ToyEnvConfig {
        ToyEnvConfig {
            max_steps: self.max_episode_steps,
            ..ToyEnvConfig::with_noise(self.noise)
        }
    }

    /// Whether start-state estimates average the critics.
    pub fn eval_mean_critic(&self) -> bool {
        self.eval_critic == "mean"
    }

    /// `output_dir`, placed under `$RAVE_OUTPUT_ROOT` when it is relative
    /// and the variable is set.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_VAR) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }

    /// Directory of one seed's artifacts; distinct for every
    /// (environment, noise, estimator, seed).
    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.output_root().join(format!(
            "{}-k{}-{}-seed{seed}",
            self.env,
            self.noise,
            self.estimator.to_ascii_lowercase()
        ))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(LabError::Config(m));
        if self.env != TOY_ENV_NAME {
            return fail(format!(
                "unknown environment `{}` (available: {TOY_ENV_NAME})",
                self.env
            ));
        }
        self.toy().validate()?;
        self.expansion()?.validate()?;
        self.agent()?.validate()?;
        if let Some(d) = self.dynamics()? {
            d.validate()?;
        }
        if self.eval_critic != "first" && self.eval_critic != "mean" {
            return fail(format!("eval_critic must be first or mean, got `{}`", self.eval_critic));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("replay_capacity", self.replay_capacity),
            ("eval_period", self.eval_period),
            ("workers", self.workers),
            ("snapshot_period", self.snapshot_period),
            ("oracle_episodes", self.oracle_episodes),
            ("hidden_width", self.hidden_width),
            ("model_width", self.model_width),
        ] {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if self.batch_size > self.replay_capacity {
            return fail("batch_size exceeds replay_capacity".into());
        }
        if self.warmup_frames < self.batch_size {
            return fail(format!(
                "warmup_frames ({}) must cover one batch ({})",
                self.warmup_frames, self.batch_size
            ));
        }
        for (name, lr) in [
            ("policy_lr", self.policy_lr),
            ("critic_lr", self.critic_lr),
            ("dynamics_lr", self.dynamics_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required".into());
        }
        if self.oracle_grid.is_nan() || self.oracle_grid <= 0.0 {
            return fail("oracle_grid must be positive".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "estimator = \"steve\"\nnoise = 1.0\nseeds = [7]\n").unwrap();
        let flags = Overrides {
            noise: Some(0.0),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(&path), &flags).unwrap();
        assert_eq!(cfg.estimator, "steve");
        assert_eq!(cfg.noise, 0.0);
        assert_eq!(cfg.seeds, vec![7]);
    }

    #[test]
    fn rejects_bad_values_before_running() {
        let flags = |o: Overrides| RunConfig::resolve(None, &o);
        assert!(flags(Overrides {
            estimator: Some("sac".into()),
            ..Default::default()
        })
        .is_err());
        assert!(flags(Overrides {
            gamma: Some(1.0),
            ..Default::default()
        })
        .is_err());
        assert!(flags(Overrides {
            batch_size: Some(0),
            ..Default::default()
        })
        .is_err());
        assert!(flags(Overrides {
            env: Some("cheetah".into()),
            ..Default::default()
        })
        .is_err());
        assert!(RunConfig::from_toml("bogus_key = 1").is_err());
    }

    #[test]
    fn estimator_fixes_model_family() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.model().unwrap(), Some((ModelMode::Probabilistic, 4)));
        cfg.estimator = "mve".into();
        assert_eq!(cfg.model().unwrap(), Some((ModelMode::Deterministic, 1)));
        assert_eq!(cfg.critics().unwrap(), 1);
        cfg.estimator = "ddpg".into();
        assert_eq!(cfg.model().unwrap(), None);
    }

    #[test]
    fn run_dirs_do_not_collide() {
        let cfg = RunConfig::default();
        assert_ne!(cfg.run_dir(0), cfg.run_dir(1));
        let other = RunConfig {
            estimator: "mve".into(),
            ..cfg.clone()
        };
        assert_ne!(cfg.run_dir(0), other.run_dir(0));
    }
}
