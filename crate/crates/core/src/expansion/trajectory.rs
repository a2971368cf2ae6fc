use alloc::vec::Vec;

use crate::{Error, Result};

/// `d_{t,t+steps}`: the probability-like weight that the imagined episode is
/// still running `steps` transitions after `t`.
///
/// `terminations[l]` is the predicted termination of the imagined state
/// `s_{t+2+l}`; `steps = 1` only looks at the real `origin_done`.
pub fn continuation_mask(origin_done: f64, terminations: &[f64], steps: usize) -> Result<f64> {
    if steps == 0 || steps > terminations.len() + 1 {
        return Err(Error::Usage(alloc::format!(
            "mask step {steps} outside 1..={}",
            terminations.len() + 1
        )));
    }
    let mut mask = 1.0 - origin_done;
    for d in &terminations[..steps - 1] {
        mask *= 1.0 - d;
    }
    Ok(mask)
}

/// `r_t + sum_h gamma^h d_{t,t+h} r_h + gamma^(H+1) d_{t,t+H+1} tail` with
/// `H = rewards.len()`.
pub fn expansion_value(
    reward: f64,
    origin_done: f64,
    rewards: &[f64],
    terminations: &[f64],
    tail: f64,
    gamma: f64,
) -> Result<f64> {
    if rewards.len() != terminations.len() {
        return Err(Error::Dimension {
            context: "expansion_value terminations",
            expected: rewards.len(),
            found: terminations.len(),
        });
    }
    let mut acc = Accumulator::new(reward, origin_done);
    for (r, d) in rewards.iter().zip(terminations) {
        acc.push(*r, *d, gamma);
    }
    Ok(acc.bootstrap(tail, gamma))
}

/// Running state of the expansion sum; shared by every estimator so the
/// reductions between them hold bitwise.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Accumulator {
    partial: f64,
    discount: f64,
    mask: f64,
}

impl Accumulator {
    pub(crate) fn new(reward: f64, origin_done: f64) -> Self {
        Self {
            partial: reward,
            discount: 1.0,
            mask: 1.0 - origin_done,
        }
    }

    /// Adds the reward of the next imagined step and the termination of the
    /// state it leads to.
    pub(crate) fn push(&mut self, reward: f64, termination: f64, gamma: f64) {
        self.discount *= gamma;
        self.partial += (self.discount * self.mask) * reward;
        self.mask *= 1.0 - termination;
    }

    pub(crate) fn bootstrap(&self, tail: f64, gamma: f64) -> f64 {
        self.partial + ((self.discount * gamma) * self.mask) * tail
    }
}

/// One imagined rollout from a replayed `(r_t, s_{t+1}, done)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImaginedTrajectory {
    pub reward: f64,
    pub origin_done: f64,
    /// `s_{t+1}` (real) followed by the imagined `s_{t+2} .. s_{t+H+1}`.
    pub states: Vec<Vec<f64>>,
    /// Policy actions at each entry of `states`.
    pub actions: Vec<Vec<f64>>,
    /// Imagined `r_{t+1} .. r_{t+H}`.
    pub rewards: Vec<f64>,
    /// Predicted terminations of `s_{t+2} .. s_{t+H+1}`.
    pub terminations: Vec<f64>,
    /// Target critic at the last state-action pair.
    pub tail: f64,
    /// `(transition/termination member, reward member, critic member)`.
    pub members: (usize, usize, usize),
}

impl ImaginedTrajectory {
    pub fn horizon(&self) -> usize {
        self.rewards.len()
    }

    pub fn value(&self, gamma: f64) -> Result<f64> {
        expansion_value(
            self.reward,
            self.origin_done,
            &self.rewards,
            &self.terminations,
            self.tail,
            gamma,
        )
    }
}

/// MVE target of a mean-mode trajectory.
pub fn mve_target(trajectory: &ImaginedTrajectory, gamma: f64) -> Result<f64> {
    trajectory.value(gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    fn brute_mask(origin_done: f64, d: &[f64], steps: usize) -> f64 {
        let mut terms = vec![1.0 - origin_done];
        terms.extend(d[..steps - 1].iter().map(|x| 1.0 - x));
        terms.iter().fold(1.0, |a, b| a * b)
    }

    #[test]
    fn mask_examples() {
        for s in 1..=3 {
            assert_eq!(continuation_mask(1.0, &[0.2, 0.3], s).unwrap(), 0.0);
            assert_eq!(continuation_mask(0.0, &[0.0, 0.0], s).unwrap(), 1.0);
        }
        let m: Vec<f64> = (1..=3)
            .map(|s| continuation_mask(0.0, &[0.5, 0.5], s).unwrap())
            .collect();
        assert_eq!(m, vec![1.0, 0.5, 0.25]);
        assert!(continuation_mask(0.0, &[0.5], 3).is_err());
        assert!(continuation_mask(0.0, &[0.5], 0).is_err());
    }

    #[test]
    fn mve_examples() {
        assert_eq!(expansion_value(1.0, 0.0, &[], &[], 10.0, 0.9).unwrap(), 10.0);
        assert_eq!(expansion_value(7.5, 1.0, &[], &[], 10.0, 0.9).unwrap(), 7.5);
        assert_eq!(
            expansion_value(1.0, 0.0, &[1.0, 1.0], &[0.0, 0.0], 0.0, 0.5).unwrap(),
            1.75
        );
        assert!(expansion_value(1.0, 0.0, &[1.0], &[], 0.0, 0.5).is_err());
    }

    #[test]
    fn zero_horizon_is_one_step_td() {
        for (r, d, q, g) in [(1.0, 0.0, 10.0, 0.9), (-100.0, 0.0, 455.3, 0.99), (3.0, 1.0, 2.0, 0.5)] {
            let td = r + (g * (1.0 - d)) * q;
            assert_eq!(expansion_value(r, d, &[], &[], q, g).unwrap().to_bits(), td.to_bits());
        }
    }

    proptest! {
        #[test]
        fn mask_matches_brute_force(
            origin in prop::sample::select(vec![0.0, 1.0]),
            d in prop::collection::vec(0.0f64..=1.0, 0..6),
        ) {
            let mut prev = 1.0;
            for steps in 1..=d.len() + 1 {
                let m = continuation_mask(origin, &d, steps).unwrap();
                prop_assert_eq!(m, brute_mask(origin, &d, steps));
                prop_assert!((0.0..=1.0).contains(&m));
                prop_assert!(m <= prev);
                prev = m;
            }
        }

        #[test]
        fn expansion_is_location_equivariant_in_tail_free_form(
            r in -100.0f64..100.0,
            rs in prop::collection::vec(-10.0f64..10.0, 0..4),
            q in -500.0f64..500.0,
        ) {
            // With gamma-weighted sums the constant shift of the tail moves the
            // value by gamma^(H+1) * shift.
            let d = vec![0.0; rs.len()];
            let g = 0.9;
            let a = expansion_value(r, 0.0, &rs, &d, q, g).unwrap();
            let b = expansion_value(r, 0.0, &rs, &d, q + 1.0, g).unwrap();
            let expect = libm::pow(g, (rs.len() + 1) as f64);
            prop_assert!((b - a - expect).abs() < 1e-9);
        }
    }
}
