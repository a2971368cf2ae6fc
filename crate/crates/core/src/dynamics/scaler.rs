use alloc::vec;
use alloc::vec::Vec;

use crate::nn::Matrix;

/// Per-column affine standardisation `(x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Scaler {
    pub fn identity(width: usize) -> Self {
        Self {
            shift: vec![0.0; width],
            scale: vec![1.0; width],
        }
    }

    /// Column means and standard deviations of `data`; near-constant
    /// columns keep unit scale.
    pub fn fit(data: &Matrix) -> Self {
        let (rows, cols) = (data.rows(), data.cols());
        if rows == 0 {
            return Self::identity(cols);
        }
        let mut shift = vec![0.0; cols];
        let mut scale = vec![0.0; cols];
        for r in 0..rows {
            for (s, v) in shift.iter_mut().zip(data.row(r)) {
                *s += v;
            }
        }
        shift.iter_mut().for_each(|s| *s /= rows as f64);
        for r in 0..rows {
            for ((q, v), m) in scale.iter_mut().zip(data.row(r)).zip(&shift) {
                *q += (v - m) * (v - m);
            }
        }
        for q in &mut scale {
            let sd = libm::sqrt(*q / rows as f64);
            *q = if sd > 1e-6 { sd } else { 1.0 };
        }
        Self { shift, scale }
    }

    pub fn width(&self) -> usize {
        self.shift.len()
    }

    pub fn normalize(&self, data: &Matrix) -> Matrix {
        let mut out = data.clone();
        let w = self.width();
        for (i, v) in out.as_mut_slice().iter_mut().enumerate() {
            let c = i % w;
            *v = (*v - self.shift[c]) / self.scale[c];
        }
        out
    }

    /// Inverse of [`Scaler::normalize`] for values.
    pub fn denormalize_in_place(&self, data: &mut [f64]) {
        let w = self.width();
        for (i, v) in data.iter_mut().enumerate() {
            let c = i % w;
            *v = *v * self.scale[c] + self.shift[c];
        }
    }

    /// Maps variances from normalised units back to data units.
    pub fn denormalize_variance_in_place(&self, data: &mut [f64]) {
        let w = self.width();
        for (i, v) in data.iter_mut().enumerate() {
            let c = i % w;
            *v *= self.scale[c] * self.scale[c];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_normalize_round_trip() {
        let data = Matrix::from_rows(&[&[1.0, 10.0], &[3.0, 10.0], &[5.0, 10.0]]).unwrap();
        let s = Scaler::fit(&data);
        assert_eq!(s.shift, vec![3.0, 10.0]);
        assert_eq!(s.scale[1], 1.0);
        let n = s.normalize(&data);
        let mut back = n.as_slice().to_vec();
        s.denormalize_in_place(&mut back);
        for (a, b) in back.iter().zip(data.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
