//! Scalar losses and their gradients.

use core::f64::consts::PI;

use super::Matrix;
use crate::error::check_dim;
use crate::{Error, Result};

/// `-ln N(observed | mean, variance)`.
pub fn gaussian_nll(mean: f64, variance: f64, observed: f64) -> Result<f64> {
    Ok(gaussian_nll_grad(mean, variance, observed)?.0)
}

/// Gaussian NLL with its partial derivatives: `(nll, d/d mean, d/d variance)`.
pub fn gaussian_nll_grad(mean: f64, variance: f64, observed: f64) -> Result<(f64, f64, f64)> {
    if variance.is_nan() || variance <= 0.0 {
        return Err(Error::Domain(alloc::format!(
            "gaussian_nll needs a positive variance, got {variance}"
        )));
    }
    let diff = observed - mean;
    let nll = 0.5 * libm::log(2.0 * PI * variance) + diff * diff / (2.0 * variance);
    let d_mean = -diff / variance;
    let d_var = 0.5 / variance - diff * diff / (2.0 * variance * variance);
    Ok((nll, d_mean, d_var))
}

/// Batch Gaussian NLL: summed over output columns, averaged over rows.
///
/// Returns the loss and the gradients with respect to `mean` and `variance`.
pub fn gaussian_nll_batch(mean: &Matrix, variance: &Matrix, observed: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    same_shape("gaussian_nll_batch", mean, variance)?;
    same_shape("gaussian_nll_batch", mean, observed)?;
    if mean.rows() == 0 {
        return Err(Error::Usage("gaussian_nll_batch on an empty batch".into()));
    }
    let scale = 1.0 / mean.rows() as f64;
    let mut d_mean = Matrix::zeros(mean.rows(), mean.cols());
    let mut d_var = Matrix::zeros(mean.rows(), mean.cols());
    let mut total = 0.0;
    for (idx, ((&m, &v), &y)) in mean
        .as_slice()
        .iter()
        .zip(variance.as_slice())
        .zip(observed.as_slice())
        .enumerate()
    {
        let (nll, dm, dv) = gaussian_nll_grad(m, v, y)?;
        total += nll;
        d_mean.as_mut_slice()[idx] = dm * scale;
        d_var.as_mut_slice()[idx] = dv * scale;
    }
    Ok((total * scale, d_mean, d_var))
}

/// Squared error summed over columns and averaged over rows, with its gradient.
pub fn mse_batch(pred: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    same_shape("mse_batch", pred, target)?;
    if pred.rows() == 0 {
        return Err(Error::Usage("mse_batch on an empty batch".into()));
    }
    let scale = 1.0 / pred.rows() as f64;
    let mut grad = Matrix::zeros(pred.rows(), pred.cols());
    let mut total = 0.0;
    for (idx, (&p, &t)) in pred.as_slice().iter().zip(target.as_slice()).enumerate() {
        let diff = p - t;
        total += diff * diff;
        grad.as_mut_slice()[idx] = 2.0 * diff * scale;
    }
    Ok((total * scale, grad))
}

fn same_shape(context: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    check_dim(context, a.rows(), b.rows())?;
    check_dim(context, a.cols(), b.cols())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_normal_values() {
        assert!((gaussian_nll(0.0, 1.0, 0.0).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!((gaussian_nll(0.0, 1.0, 1.0).unwrap() - 1.418_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_variance() {
        assert!(matches!(gaussian_nll(0.0, 0.0, 1.0), Err(Error::Domain(_))));
        assert!(matches!(gaussian_nll(0.0, -1.0, 1.0), Err(Error::Domain(_))));
        assert!(gaussian_nll(0.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (m, v, y) = (0.3, 0.7, -0.2);
        let h = 1e-6;
        let (_, dm, dv) = gaussian_nll_grad(m, v, y).unwrap();
        let fd_m = (gaussian_nll(m + h, v, y).unwrap() - gaussian_nll(m - h, v, y).unwrap()) / (2.0 * h);
        let fd_v = (gaussian_nll(m, v + h, y).unwrap() - gaussian_nll(m, v - h, y).unwrap()) / (2.0 * h);
        assert!(((dm - fd_m) / fd_m).abs() < 1e-4);
        assert!(((dv - fd_v) / fd_v).abs() < 1e-4);
    }

    #[test]
    fn minimised_at_observation() {
        let observed = 0.37;
        let best = (-200..=200)
            .map(|i| i as f64 * 0.01)
            .min_by(|a, b| {
                gaussian_nll(*a, 0.5, observed)
                    .unwrap()
                    .total_cmp(&gaussian_nll(*b, 0.5, observed).unwrap())
            })
            .unwrap();
        assert!((best - observed).abs() < 0.006);
    }

    #[test]
    fn batch_is_mean_over_rows() {
        let mean = Matrix::column(alloc::vec![0.0, 0.0]);
        let var = Matrix::column(alloc::vec![1.0, 1.0]);
        let obs = Matrix::column(alloc::vec![0.0, 1.0]);
        let (loss, _, _) = gaussian_nll_batch(&mean, &var, &obs).unwrap();
        assert!((loss - (0.918_938_533_204_672_7 + 1.418_938_533_204_672_7) / 2.0).abs() < 1e-12);
    }
}
