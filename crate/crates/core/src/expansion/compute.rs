use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::interpolate::clb_from_stats;
use super::trajectory::Accumulator;
use super::{adaptive_alpha, build_candidates, interpolation_weights, EstimatorKind, ExpansionConfig};
use crate::agent::Batch;
use crate::dynamics::{DynamicsEnsemble, ModelMode};
use crate::nn::{Matrix, Mlp};
use crate::{Error, Result};

/// Batch averages describing how a target was formed.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// Mean normalised interpolation weight of each horizon `0..=H_max`.
    pub weights: Vec<f64>,
    /// Mean confidence factor applied by the lower bound.
    pub alpha_eff: f64,
    /// Mean amount the lower bound removed from the STEVE target.
    pub clb_subtraction: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

/// `r + gamma (1 - done) mean_k Q'_k(s', pi(s'))`.
pub fn td0_targets(batch: &Batch, policy: &Mlp, q_targets: &[Mlp], gamma: f64) -> Result<Vec<f64>> {
    if q_targets.is_empty() {
        return Err(Error::Config("at least one target critic is required".into()));
    }
    let next_actions = policy.forward(&batch.next_states)?;
    let input = Matrix::hcat(&[&batch.next_states, &next_actions])?;
    let mut q = vec![0.0; batch.len()];
    for net in q_targets {
        for (acc, v) in q.iter_mut().zip(net.forward(&input)?.as_slice()) {
            *acc += v;
        }
    }
    let n = q_targets.len() as f64;
    Ok((0..batch.len())
        .map(|b| Accumulator::new(batch.rewards[b], batch.dones[b]).bootstrap(q[b] / n, gamma))
        .collect())
}

fn one_hot(len: usize, at: usize) -> Vec<f64> {
    let mut w = vec![0.0; len];
    w[at] = 1.0;
    w
}

/// Critic regression targets for `batch` under `config.estimator`.
///
/// `q_targets` are the delayed critics; `dynamics` is required by every
/// estimator except TD0.
pub fn compute_targets<R: Rng + ?Sized>(
    batch: &Batch,
    policy: &Mlp,
    q_targets: &[Mlp],
    dynamics: Option<&DynamicsEnsemble>,
    config: &ExpansionConfig,
    rng: &mut R,
) -> Result<Targets> {
    config.validate()?;
    let horizons = config.horizon + 1;
    if config.estimator == EstimatorKind::Td0 {
        return Ok(Targets {
            values: td0_targets(batch, policy, q_targets, config.gamma)?,
            diagnostics: Diagnostics {
                weights: one_hot(horizons, 0),
                alpha_eff: 0.0,
                clb_subtraction: 0.0,
            },
        });
    }
    let dynamics = dynamics.ok_or_else(|| {
        Error::Config(alloc::format!(
            "estimator {} needs a dynamics ensemble",
            config.estimator.name()
        ))
    })?;
    if config.estimator == EstimatorKind::Rave && dynamics.mode() != ModelMode::Probabilistic {
        return Err(Error::Config("RAVE needs a probabilistic dynamics ensemble".into()));
    }
    let matrix = build_candidates(batch, dynamics, policy, q_targets, config, rng)?;
    let rows = batch.len();
    let alphas = match (config.estimator, config.adaptive_alpha) {
        (EstimatorKind::Rave, true) => adaptive_alpha(
            dynamics,
            &batch.states,
            &batch.actions,
            &batch.next_states,
            config.alpha,
            config.z,
        )?,
        (EstimatorKind::Rave, false) => vec![config.alpha; rows],
        _ => vec![0.0; rows],
    };

    let mut values = Vec::with_capacity(rows);
    let mut mean_weights = vec![0.0; horizons];
    let mut subtraction = 0.0;
    for (b, &alpha) in alphas.iter().enumerate() {
        let stats = matrix.horizon_stats(b)?;
        if config.estimator == EstimatorKind::Mve {
            values.push(stats[config.horizon].0);
            continue;
        }
        let vars: Vec<f64> = stats.iter().map(|s| s.1).collect();
        let w = interpolation_weights(&vars, config.weight_floor);
        let mut target = 0.0;
        for (h, (&(mean, var), wh)) in stats.iter().zip(&w).enumerate() {
            let bound = clb_from_stats(mean, var, alpha);
            target += wh * bound;
            subtraction += wh * (mean - bound);
            mean_weights[h] += wh;
        }
        values.push(target);
    }
    let n = rows as f64;
    let diagnostics = if config.estimator == EstimatorKind::Mve {
        Diagnostics {
            weights: one_hot(horizons, config.horizon),
            alpha_eff: 0.0,
            clb_subtraction: 0.0,
        }
    } else {
        Diagnostics {
            weights: mean_weights.iter().map(|w| w / n).collect(),
            alpha_eff: alphas.iter().sum::<f64>() / n,
            clb_subtraction: subtraction / n,
        }
    };
    Ok(Targets { values, diagnostics })
}
