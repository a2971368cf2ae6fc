use crate::{Error, Result};

/// Population mean and variance (divide by `M`) of ensemble outputs.
pub fn ensemble_stats(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Usage("ensemble_stats of an empty ensemble".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok((mean, var))
}
