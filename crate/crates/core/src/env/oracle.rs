use alloc::format;
use alloc::vec::Vec;

use super::toy::{toy_transition, ToyEnv, ToyEnvConfig};
use crate::{Error, Result};

/// Deterministic state-to-action map.
pub trait Policy {
    fn act(&self, state: &[f64], action: &mut [f64]);
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, state: &[f64], action: &mut [f64]) {
        (**self).act(state, action)
    }
}

/// Always emits the same action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPolicy(pub f64);

impl Policy for ConstantPolicy {
    fn act(&self, _state: &[f64], action: &mut [f64]) {
        action.fill(self.0);
    }
}

/// Moves right at or above `threshold`, left below it (1-D states).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdPolicy {
    pub threshold: f64,
}

impl Policy for ThresholdPolicy {
    fn act(&self, state: &[f64], action: &mut [f64]) {
        action[0] = if state[0] >= self.threshold { 1.0 } else { -1.0 };
    }
}

/// Tabular policy on an evenly spaced 1-D grid, looked up at the nearest
/// grid point. Produced by [`solve_toy_policy`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridPolicy {
    lo: f64,
    spacing: f64,
    /// `(Q(x, -1), Q(x, +1))` per grid point.
    action_values: Vec<(f64, f64)>,
}

impl GridPolicy {
    fn index(&self, s: f64) -> usize {
        let i = libm::round((s - self.lo) / self.spacing);
        (i.max(0.0) as usize).min(self.action_values.len() - 1)
    }

    /// Dynamic-programming action values `(left, right)` nearest to `s`.
    pub fn action_values(&self, s: f64) -> (f64, f64) {
        self.action_values[self.index(s)]
    }

    pub fn grid(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.action_values
            .iter()
            .enumerate()
            .map(|(i, &(l, r))| (self.lo + i as f64 * self.spacing, l, r))
    }
}

impl Policy for GridPolicy {
    fn act(&self, state: &[f64], action: &mut [f64]) {
        let (left, right) = self.action_values(state[0]);
        action[0] = if right >= left { 1.0 } else { -1.0 };
    }
}

/// Monte-Carlo estimate of a discounted return.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub episodes: usize,
}

/// Estimates `Q^policy(start, first_action)` on the toy task by averaging
/// the discounted return of `episodes` rollouts that take `first_action` in
/// `start` and then follow `policy`.
pub fn ground_truth_value(
    cfg: &ToyEnvConfig,
    policy: &dyn Policy,
    start: f64,
    first_action: f64,
    episodes: usize,
    gamma: f64,
    seed: u64,
) -> Result<OracleEstimate> {
    if episodes == 0 {
        return Err(Error::Config("the oracle needs at least one episode".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Config(format!("discount must lie in (0, 1], got {gamma}")));
    }
    let mut env = ToyEnv::new(cfg.clone(), seed)?;
    // Welford running moments.
    let mut mean = 0.0;
    let mut m2 = 0.0;
    let mut action = [0.0];
    for n in 1..=episodes {
        let mut state;
        env.reset_at(start);
        let mut discount = 1.0;
        let mut ret = 0.0;
        let mut a = first_action;
        loop {
            let (next, reward, terminal) = env.step_scalar(a)?;
            ret += discount * reward;
            discount *= gamma;
            state = next;
            if terminal || state.truncated {
                break;
            }
            policy.act(&[state.position], &mut action);
            a = action[0];
        }
        let delta = ret - mean;
        mean += delta / n as f64;
        m2 += delta * (ret - mean);
    }
    let std_error = if episodes > 1 {
        libm::sqrt(m2 / (episodes - 1) as f64 / episodes as f64)
    } else {
        0.0
    };
    Ok(OracleEstimate {
        mean,
        std_error,
        episodes,
    })
}

/// Expected reward and `(next index, probability)` pairs of one grid cell.
type SparseRow = (f64, Vec<(usize, f64)>);

/// Optimal policy of the toy task by value iteration on a grid of spacing
/// `spacing` over `[-bound, bound]`.
///
/// With noise the next-state density is integrated exactly over grid cells
/// and over the trap and terminal regions; without noise the grid must
/// contain `s + 1` for every grid point `s` (`1 / spacing` integral).
pub fn solve_toy_policy(cfg: &ToyEnvConfig, gamma: f64, spacing: f64) -> Result<GridPolicy> {
    cfg.validate()?;
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("discount must lie in (0, 1), got {gamma}")));
    }
    let cells = libm::round(2.0 * cfg.bound / spacing);
    if spacing.is_nan() || spacing <= 0.0 || (cells * spacing - 2.0 * cfg.bound).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "grid spacing {spacing} must evenly divide [-{b}, {b}]",
            b = cfg.bound
        )));
    }
    let n = cells as usize + 1;
    let lo = -cfg.bound;
    let point = |i: usize| lo + i as f64 * spacing;

    // Sparse transition rows per (action, state): expected reward plus
    // (next index, probability) pairs for non-terminal outcomes.
    let mut rows: [Vec<SparseRow>; 2] = [Vec::with_capacity(n), Vec::with_capacity(n)];
    for (slot, direction) in [(0usize, -1.0f64), (1, 1.0)] {
        for i in 0..n {
            let x = point(i);
            if cfg.noise == 0.0 {
                let (next, reward, terminal) = toy_transition(cfg, x, direction, 0.0);
                let succ = if terminal {
                    Vec::new()
                } else {
                    let j = libm::round((next - lo) / spacing) as usize;
                    alloc::vec![(j, 1.0)]
                };
                rows[slot].push((reward, succ));
                continue;
            }
            let mu = x + direction;
            let k = cfg.noise;
            let cdf = |edge: f64| normal_cdf((edge - mu) / k);
            let p_right = 1.0 - cdf(cfg.bound);
            let p_left = cdf(-cfg.bound);
            let p_trap = cdf(cfg.trap.1) - cdf(cfg.trap.0);
            let p_inside = 1.0 - p_right - p_left;
            let reward = p_right * cfg.right_reward
                + p_left * cfg.left_reward
                + p_trap * cfg.trap_reward
                + (p_inside - p_trap) * cfg.step_penalty;
            let reach = 9.0 * k;
            let first = libm::floor((mu - reach - lo) / spacing).max(0.0) as usize;
            let last = (libm::ceil((mu + reach - lo) / spacing).max(0.0) as usize).min(n - 1);
            let mut succ = Vec::new();
            for j in first..=last {
                let lower = if j == 0 { lo } else { point(j) - 0.5 * spacing };
                let upper = if j == n - 1 {
                    cfg.bound
                } else {
                    point(j) + 0.5 * spacing
                };
                let p = cdf(upper) - cdf(lower);
                if p > 0.0 {
                    succ.push((j, p));
                }
            }
            rows[slot].push((reward, succ));
        }
    }

    let mut values = alloc::vec![0.0f64; n];
    let mut q = alloc::vec![(0.0f64, 0.0f64); n];
    for _ in 0..100_000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let eval = |(reward, succ): &(f64, Vec<(usize, f64)>)| {
                reward + gamma * succ.iter().map(|&(j, p)| p * values[j]).sum::<f64>()
            };
            q[i] = (eval(&rows[0][i]), eval(&rows[1][i]));
        }
        for i in 0..n {
            let v = q[i].0.max(q[i].1);
            change = change.max((v - values[i]).abs());
            values[i] = v;
        }
        if change < 1e-10 {
            break;
        }
    }
    Ok(GridPolicy {
        lo,
        spacing,
        action_values: q,
    })
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}
