use alloc::vec::Vec;

use super::CandidateMatrix;
use crate::dynamics::{ensemble_stats, DynamicsEnsemble};
use crate::nn::Matrix;
use crate::Result;

/// Normalised inverse-variance weights `omega_H / sum omega` with
/// `omega_H = 1 / (var_H + floor)`.
pub fn interpolation_weights(variances: &[f64], floor: f64) -> Vec<f64> {
    let omega: Vec<f64> = variances.iter().map(|v| 1.0 / (v + floor)).collect();
    let total: f64 = omega.iter().sum();
    omega.iter().map(|w| w / total).collect()
}

fn weighted(weights: &[f64], values: impl Iterator<Item = f64>) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

/// Inverse-variance interpolation of the per-horizon candidate means of
/// origin `b`.
pub fn steve_target(matrix: &CandidateMatrix, b: usize, floor: f64) -> Result<f64> {
    let stats = matrix.horizon_stats(b)?;
    let vars: Vec<f64> = stats.iter().map(|s| s.1).collect();
    Ok(weighted(
        &interpolation_weights(&vars, floor),
        stats.iter().map(|s| s.0),
    ))
}

/// `mean - alpha * std` of one horizon's candidates (population std).
pub fn clb(values: &[f64], alpha: f64) -> Result<f64> {
    let (mean, var) = ensemble_stats(values)?;
    Ok(clb_from_stats(mean, var, alpha))
}

pub(crate) fn clb_from_stats(mean: f64, var: f64, alpha: f64) -> f64 {
    mean - alpha * libm::sqrt(var)
}

/// STEVE weights applied to per-horizon confidence lower bounds.
pub fn rave_target(matrix: &CandidateMatrix, b: usize, alpha: f64, floor: f64) -> Result<f64> {
    let stats = matrix.horizon_stats(b)?;
    let vars: Vec<f64> = stats.iter().map(|s| s.1).collect();
    Ok(weighted(
        &interpolation_weights(&vars, floor),
        stats.iter().map(|&(m, v)| clb_from_stats(m, v, alpha)),
    ))
}

/// `max(0, alpha * (1 - squared_error / z))`.
pub fn alpha_from_error(squared_error: f64, alpha: f64, z: f64) -> f64 {
    let a = alpha * (1.0 - squared_error / z);
    if a > 0.0 {
        a
    } else {
        0.0
    }
}

/// Per-sample confidence factor from the ensemble-mean one-step prediction
/// error against the replayed next state.
pub fn adaptive_alpha(
    dynamics: &DynamicsEnsemble,
    states: &Matrix,
    actions: &Matrix,
    next_states: &Matrix,
    alpha: f64,
    z: f64,
) -> Result<Vec<f64>> {
    let predicted = dynamics.mean_transition(states, actions)?;
    let err = predicted.sub(next_states)?;
    Ok((0..err.rows())
        .map(|r| {
            let sq: f64 = err.row(r).iter().map(|e| e * e).sum();
            alpha_from_error(sq, alpha, z)
        })
        .collect())
}
