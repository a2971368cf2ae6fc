use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::trajectory::Accumulator;
use super::{ExpansionConfig, ImaginedTrajectory};
use crate::agent::Batch;
use crate::dynamics::{ensemble_stats, DynamicsEnsemble, ModelMode};
use crate::nn::{Matrix, Mlp};
use crate::{Error, Result};

/// Per-origin grid of expansion targets: `horizons x combos` values for each
/// origin, combination `c = i * N^2 + j * N + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMatrix {
    origins: usize,
    horizons: usize,
    combos: usize,
    values: Vec<f64>,
}

impl CandidateMatrix {
    pub fn new(origins: usize, horizons: usize, combos: usize) -> Self {
        Self {
            origins,
            horizons,
            combos,
            values: vec![0.0; origins * horizons * combos],
        }
    }

    /// A single-origin matrix from per-horizon candidate lists of equal length.
    pub fn from_horizons(per_horizon: &[&[f64]]) -> Result<Self> {
        let combos = per_horizon.first().map_or(0, |h| h.len());
        if combos == 0 {
            return Err(Error::Usage(
                "candidate matrix needs at least one value per horizon".into(),
            ));
        }
        let mut values = Vec::with_capacity(combos * per_horizon.len());
        for h in per_horizon {
            if h.len() != combos {
                return Err(Error::Dimension {
                    context: "CandidateMatrix horizon length",
                    expected: combos,
                    found: h.len(),
                });
            }
            values.extend_from_slice(h);
        }
        Ok(Self {
            origins: 1,
            horizons: per_horizon.len(),
            combos,
            values,
        })
    }

    pub fn origins(&self) -> usize {
        self.origins
    }

    /// `H_max + 1`.
    pub fn horizons(&self) -> usize {
        self.horizons
    }

    pub fn combos(&self) -> usize {
        self.combos
    }

    /// Candidates per origin, `combos * horizons`.
    pub fn per_origin(&self) -> usize {
        self.combos * self.horizons
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn candidates(&self, b: usize, h: usize) -> &[f64] {
        let start = (b * self.horizons + h) * self.combos;
        &self.values[start..start + self.combos]
    }

    pub fn get(&self, b: usize, h: usize, c: usize) -> f64 {
        self.candidates(b, h)[c]
    }

    fn set(&mut self, b: usize, h: usize, c: usize, v: f64) {
        self.values[(b * self.horizons + h) * self.combos + c] = v;
    }

    /// `(mean, population variance)` of each horizon's candidates at origin `b`.
    pub fn horizon_stats(&self, b: usize) -> Result<Vec<(f64, f64)>> {
        if b >= self.origins {
            return Err(Error::Usage(format!(
                "origin {b} out of range for {} origins",
                self.origins
            )));
        }
        (0..self.horizons)
            .map(|h| ensemble_stats(self.candidates(b, h)))
            .collect()
    }
}

/// Replayed quantities a rollout starts from.
#[derive(Debug, Clone, PartialEq)]
pub struct Origin {
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: f64,
}

/// States, actions and terminations of one transition member's rollout over
/// a batch of origins.
struct Rollout {
    /// `s_{t+1} .. s_{t+H+1}`.
    states: Vec<Matrix>,
    actions: Vec<Matrix>,
    /// Terminations of `s_{t+2} .. s_{t+H+1}`.
    terminations: Vec<Vec<f64>>,
}

fn roll<R: Rng + ?Sized>(
    dynamics: &DynamicsEnsemble,
    i: usize,
    policy: &Mlp,
    start: &Matrix,
    horizon: usize,
    sample: bool,
    rng: &mut R,
) -> Result<Rollout> {
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon + 1);
    let mut terminations = Vec::with_capacity(horizon);
    states.push(start.clone());
    for h in 0..horizon {
        let a = policy.forward(&states[h])?;
        let next = dynamics.predict_transition(i, &states[h], &a, sample, rng)?;
        terminations.push(dynamics.predict_termination(i, &next, sample, rng)?);
        actions.push(a);
        states.push(next);
    }
    actions.push(policy.forward(&states[horizon])?);
    Ok(Rollout {
        states,
        actions,
        terminations,
    })
}

fn critic_values(q: &Mlp, states: &Matrix, actions: &Matrix) -> Result<Vec<f64>> {
    Ok(q.forward(&Matrix::hcat(&[states, actions])?)?.into_vec())
}

fn rollout_rewards<R: Rng + ?Sized>(
    dynamics: &DynamicsEnsemble,
    j: usize,
    rollout: &Rollout,
    sample: bool,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    (0..rollout.terminations.len())
        .map(|h| {
            dynamics.predict_reward(
                j,
                &rollout.states[h],
                &rollout.actions[h],
                &rollout.states[h + 1],
                sample,
                rng,
            )
        })
        .collect()
}

/// Rolls member `i` from one origin for `horizon` steps, rewards from member
/// `j` and the tail value from `q_target`.
#[allow(clippy::too_many_arguments)]
pub fn imagine<R: Rng + ?Sized>(
    dynamics: &DynamicsEnsemble,
    members: (usize, usize, usize),
    policy: &Mlp,
    q_target: &Mlp,
    origin: &Origin,
    horizon: usize,
    sample: bool,
    rng: &mut R,
) -> Result<ImaginedTrajectory> {
    let (i, j, _) = members;
    let start = Matrix::from_rows(&[&origin.next_state])?;
    let rollout = roll(dynamics, i, policy, &start, horizon, sample, rng)?;
    let rewards = rollout_rewards(dynamics, j, &rollout, sample, rng)?;
    let tail = critic_values(q_target, &rollout.states[horizon], &rollout.actions[horizon])?[0];
    Ok(ImaginedTrajectory {
        reward: origin.reward,
        origin_done: origin.done,
        states: rollout.states.iter().map(|s| s.row(0).to_vec()).collect(),
        actions: rollout.actions.iter().map(|a| a.row(0).to_vec()).collect(),
        rewards: rewards.iter().map(|r| r[0]).collect(),
        terminations: rollout.terminations.iter().map(|d| d[0]).collect(),
        tail,
        members,
    })
}

/// Sampled rollout through a probabilistic ensemble and its expansion value.
#[allow(clippy::too_many_arguments)]
pub fn dve_rollout<R: Rng + ?Sized>(
    dynamics: &DynamicsEnsemble,
    members: (usize, usize, usize),
    policy: &Mlp,
    q_target: &Mlp,
    origin: &Origin,
    horizon: usize,
    gamma: f64,
    rng: &mut R,
) -> Result<(ImaginedTrajectory, f64)> {
    if dynamics.mode() != ModelMode::Probabilistic {
        return Err(Error::Config("sampled rollouts need a probabilistic ensemble".into()));
    }
    let traj = imagine(dynamics, members, policy, q_target, origin, horizon, true, rng)?;
    let value = traj.value(gamma)?;
    Ok((traj, value))
}

/// Every `(i, j, k)` expansion target at every horizon `0..=H_max` for each
/// origin in `batch`.
///
/// One rollout per transition member serves all reward members `j`, critic
/// members `k` and horizon prefixes. Rollouts are sampled when the ensemble
/// is probabilistic.
pub fn build_candidates<R: Rng + ?Sized>(
    batch: &Batch,
    dynamics: &DynamicsEnsemble,
    policy: &Mlp,
    q_targets: &[Mlp],
    config: &ExpansionConfig,
    rng: &mut R,
) -> Result<CandidateMatrix> {
    let n = config.members;
    if dynamics.members() != n || q_targets.len() != n {
        return Err(Error::Config(format!(
            "ensemble size {n} does not match {} model members and {} target critics",
            dynamics.members(),
            q_targets.len()
        )));
    }
    let sample = dynamics.mode() == ModelMode::Probabilistic;
    let horizon = config.horizon;
    let rows = batch.len();
    let rollouts = (0..n)
        .map(|i| roll(dynamics, i, policy, &batch.next_states, horizon, sample, rng))
        .collect::<Result<Vec<_>>>()?;

    // Every rollout starts from the same replayed state, so the horizon-0
    // tail is shared; the other (member, step) blocks are stacked so each
    // network runs once.
    let mut tail_blocks: Vec<(usize, usize)> = vec![(0, 0)];
    tail_blocks.extend((0..n).flat_map(|i| (1..=horizon).map(move |h| (i, h))));
    let tail_input = {
        let parts = tail_blocks
            .iter()
            .map(|&(i, h)| Matrix::hcat(&[&rollouts[i].states[h], &rollouts[i].actions[h]]))
            .collect::<Result<Vec<_>>>()?;
        Matrix::vstack(&parts.iter().collect::<Vec<_>>())?
    };
    // tails[k][block * rows + b]
    let tails = q_targets
        .iter()
        .map(|q| q.forward(&tail_input).map(Matrix::into_vec))
        .collect::<Result<Vec<_>>>()?;
    let tail_block = |i: usize, h: usize| if h == 0 { 0 } else { 1 + i * horizon + (h - 1) };

    // rewards[j][(i * horizon + h) * rows + b]
    let rewards = if horizon == 0 {
        vec![Vec::new(); n]
    } else {
        let stack = |pick: &dyn Fn(&Rollout, usize) -> &Matrix| -> Result<Matrix> {
            let parts: Vec<&Matrix> = rollouts
                .iter()
                .flat_map(|r| (0..horizon).map(move |h| (r, h)))
                .map(|(r, h)| pick(r, h))
                .collect();
            Matrix::vstack(&parts)
        };
        let s = stack(&|r, h| &r.states[h])?;
        let a = stack(&|r, h| &r.actions[h])?;
        let s2 = stack(&|r, h| &r.states[h + 1])?;
        (0..n)
            .map(|j| dynamics.predict_reward(j, &s, &a, &s2, sample, rng))
            .collect::<Result<Vec<_>>>()?
    };

    let mut matrix = CandidateMatrix::new(rows, horizon + 1, n * n * n);
    for (i, rollout) in rollouts.iter().enumerate() {
        for (j, reward) in rewards.iter().enumerate() {
            for (k, tail) in tails.iter().enumerate() {
                let c = (i * n + j) * n + k;
                for b in 0..rows {
                    let mut acc = Accumulator::new(batch.rewards[b], batch.dones[b]);
                    matrix.set(b, 0, c, acc.bootstrap(tail[b], config.gamma));
                    for h in 0..horizon {
                        acc.push(
                            reward[(i * horizon + h) * rows + b],
                            rollout.terminations[h][b],
                            config.gamma,
                        );
                        let q = tail[tail_block(i, h + 1) * rows + b];
                        matrix.set(b, h + 1, c, acc.bootstrap(q, config.gamma));
                    }
                }
            }
        }
    }
    Ok(matrix)
}
