//! On-disk cache of ground-truth start-state values.

use std::path::Path;

use rave_core::env::{ground_truth_value, solve_toy_policy, ToyEnvConfig};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Start position of every toy episode.
pub const START_STATE: f64 = 0.0;

/// One cached Monte-Carlo estimate of `Q*(start_state, start_action)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEntry {
    pub policy: String,
    pub start_state: f64,
    pub start_action: f64,
    pub k: f64,
    pub gamma: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_episodes: usize,
    pub seed: u64,
}

impl OracleEntry {
    fn matches(&self, policy: &str, action: f64, k: f64, gamma: f64, episodes: usize, seed: u64) -> bool {
        self.policy == policy
            && self.start_state == START_STATE
            && self.start_action == action
            && self.k == k
            && self.gamma == gamma
            && self.n_episodes == episodes
            && self.seed == seed
    }
}

/// Optimal-policy values at the start state for both first actions.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StartValues {
    pub right: f64,
    pub right_stderr: f64,
    pub left: f64,
    pub left_stderr: f64,
}

fn policy_name(grid: f64) -> String {
    format!("dp-grid-{grid}")
}

fn read_cache(path: &Path) -> Result<Vec<OracleEntry>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut reader = csv::Reader::from_path(path)?;
    Ok(reader.deserialize().collect::<std::result::Result<_, _>>()?)
}

fn write_cache(path: &Path, entries: &[OracleEntry]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(LabError::io(dir))?;
    }
    // Write then rename so concurrent readers never see a partial file.
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    let mut writer = csv::Writer::from_path(&tmp)?;
    for e in entries {
        writer.serialize(e)?;
    }
    writer.flush().map_err(LabError::io(&tmp))?;
    drop(writer);
    std::fs::rename(&tmp, path).map_err(LabError::io(path))
}

/// Looks up `Q*(s0, ±1)` in the cache at `path`, computing and appending
/// missing entries.
pub fn start_values(
    path: &Path,
    env: &ToyEnvConfig,
    gamma: f64,
    grid: f64,
    episodes: usize,
    seed: u64,
) -> Result<StartValues> {
    let name = policy_name(grid);
    let mut entries = read_cache(path)?;
    let mut policy = None;
    let mut lookup = |action: f64, entries: &mut Vec<OracleEntry>| -> Result<(f64, f64)> {
        if let Some(e) = entries
            .iter()
            .find(|e| e.matches(&name, action, env.noise, gamma, episodes, seed))
        {
            return Ok((e.mean, e.stderr));
        }
        if policy.is_none() {
            policy = Some(solve_toy_policy(env, gamma, grid)?);
        }
        let p = policy.as_ref().expect("solved above");
        // Without noise every rollout is identical.
        let n = if env.noise == 0.0 { 1 } else { episodes };
        let est = ground_truth_value(env, p, START_STATE, action, n, gamma, seed)?;
        entries.push(OracleEntry {
            policy: name.clone(),
            start_state: START_STATE,
            start_action: action,
            k: env.noise,
            gamma,
            mean: est.mean,
            stderr: est.std_error,
            n_episodes: episodes,
            seed,
        });
        Ok((est.mean, est.std_error))
    };
    let before = entries.len();
    let (right, right_stderr) = lookup(1.0, &mut entries)?;
    let (left, left_stderr) = lookup(-1.0, &mut entries)?;
    if entries.len() != before {
        write_cache(path, &entries)?;
    }
    Ok(StartValues {
        right,
        right_stderr,
        left,
        left_stderr,
    })
}
