use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{Adam, Matrix};
use crate::error::check_dim;
use crate::{Error, Result};

pub const VARIANCE_MIN: f64 = 1e-6;
pub const VARIANCE_MAX: f64 = 1e6;
/// `ln(VARIANCE_MIN)`.
pub const LOG_VARIANCE_MIN: f64 = -13.815510557964274;
/// `ln(VARIANCE_MAX)`.
pub const LOG_VARIANCE_MAX: f64 = 13.815510557964274;

static NEXT_NET_ID: AtomicU64 = AtomicU64::new(1);

/// Output transform of the last layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Identity,
    Tanh,
    /// Two linear outputs per predicted dimension: a mean and a
    /// log-variance. The log-variance is squashed into
    /// `[LOG_VARIANCE_MIN, LOG_VARIANCE_MAX]` with softplus walls and
    /// exponentiated, so the reported variance always lies in
    /// `[VARIANCE_MIN, VARIANCE_MAX]`.
    Gaussian,
}

/// Layer layout of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub head: Head,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, head: Head) -> Self {
        Self {
            input,
            hidden: hidden.to_vec(),
            output,
            head,
        }
    }

    /// `fc_layers` fully connected layers, every hidden one `width` wide.
    pub fn uniform(input: usize, width: usize, fc_layers: usize, output: usize, head: Head) -> Self {
        Self {
            input,
            hidden: vec![width; fc_layers.saturating_sub(1)],
            output,
            head,
        }
    }

    fn raw_output(&self) -> usize {
        match self.head {
            Head::Gaussian => 2 * self.output,
            _ => self.output,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.raw_output());
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.input == 0 || self.output == 0 || self.hidden.contains(&0) {
            return Err(Error::Config(alloc::format!(
                "layer widths must be positive: {:?}",
                self.widths()
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

/// Multilayer perceptron with ReLU between hidden layers.
///
/// Parameters are one flat vector; layer `l` stores its weights as an
/// `inputs x outputs` row-major block followed by `outputs` biases.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    id: u64,
    version: u64,
    spec: MlpSpec,
    widths: Vec<usize>,
    params: Vec<f64>,
}

/// Intermediates of one forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    net_id: u64,
    version: u64,
    /// Input of every layer; entry `l > 0` is a post-ReLU activation.
    activations: Vec<Matrix>,
    raw: Matrix,
    output: Matrix,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        &self.output
    }
}

/// Result of backprop: parameter gradient (same layout as
/// [`Mlp::params`]) and the gradient with respect to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Matrix,
}

impl Mlp {
    /// Uniform fan-in initialisation: every weight and bias of a layer with
    /// `n` inputs is drawn from `U(-1/sqrt(n), 1/sqrt(n))`.
    pub fn new<R: Rng + ?Sized>(spec: &MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        let mut params = Vec::with_capacity(spec.param_count());
        for pair in widths.windows(2) {
            let bound = 1.0 / libm::sqrt(pair[0] as f64);
            for _ in 0..pair[0] * pair[1] + pair[1] {
                params.push(rng.random_range(-bound..bound));
            }
        }
        Ok(Self::assemble(spec.clone(), widths, params))
    }

    /// Redraws the last layer's weights and biases from `U(-bound, bound)`.
    pub fn init_output_layer<R: Rng + ?Sized>(&mut self, bound: f64, rng: &mut R) {
        let n = self.widths.len();
        let count = self.widths[n - 2] * self.widths[n - 1] + self.widths[n - 1];
        let total = self.params.len();
        for p in &mut self.params[total - count..] {
            *p = rng.random_range(-bound..bound);
        }
        self.version += 1;
    }

    pub fn from_params(spec: &MlpSpec, params: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        check_dim("Mlp::from_params", spec.param_count(), params.len())?;
        Ok(Self::assemble(spec.clone(), spec.widths(), params))
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        Self::from_params(spec, vec![0.0; spec.param_count()])
    }

    fn assemble(spec: MlpSpec, widths: Vec<usize>, params: Vec<f64>) -> Self {
        Self {
            id: NEXT_NET_ID.fetch_add(1, Ordering::Relaxed),
            version: 0,
            spec,
            widths,
            params,
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn head(&self) -> Head {
        self.spec.head
    }

    pub fn input_width(&self) -> usize {
        self.spec.input
    }

    /// Number of predicted quantities (a Gaussian head emits twice as many columns).
    pub fn output_width(&self) -> usize {
        self.spec.output
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates every outstanding [`Tape`].
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    /// Bumped on every parameter mutation.
    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn same_shape(&self, other: &Mlp) -> bool {
        self.spec == other.spec
    }

    /// Returns `(weights, biases, inputs, outputs)` of layer `l`.
    fn layer(&self, l: usize) -> (&[f64], &[f64], usize, usize) {
        let offset: usize = self.widths[..=l].windows(2).map(|p| p[0] * p[1] + p[1]).sum();
        let (n_in, n_out) = (self.widths[l], self.widths[l + 1]);
        let w = &self.params[offset..offset + n_in * n_out];
        let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
        (w, b, n_in, n_out)
    }

    fn layer_offset(&self, l: usize) -> usize {
        self.widths[..=l].windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Batch forward pass: `(B, input)` to `(B, output)`, or `(B, 2*output)`
    /// laid out as `[mean | variance]` for a Gaussian head.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        check_dim("Mlp::forward input width", self.spec.input, x.cols())?;
        let rows = x.rows();
        let mut current = x.as_slice().to_vec();
        let mut next = Vec::new();
        let last = self.layer_count() - 1;
        for l in 0..=last {
            let (w, b, n_in, n_out) = self.layer(l);
            affine(&current, rows, n_in, w, b, n_out, &mut next);
            if l < last {
                relu_in_place(&mut next);
            }
            core::mem::swap(&mut current, &mut next);
        }
        let raw = Matrix::from_vec(rows, self.widths[last + 1], current)?;
        Ok(self.apply_head(&raw))
    }

    /// Forward pass that keeps the intermediates needed by [`Mlp::backward`].
    pub fn forward_recorded(&self, x: &Matrix) -> Result<Tape> {
        check_dim("Mlp::forward input width", self.spec.input, x.cols())?;
        let rows = x.rows();
        let last = self.layer_count() - 1;
        let mut activations = Vec::with_capacity(last + 1);
        activations.push(x.clone());
        let mut raw = Matrix::default();
        for l in 0..=last {
            let (w, b, n_in, n_out) = self.layer(l);
            let mut y = Vec::new();
            affine(activations[l].as_slice(), rows, n_in, w, b, n_out, &mut y);
            if l < last {
                relu_in_place(&mut y);
                activations.push(Matrix::from_vec(rows, n_out, y)?);
            } else {
                raw = Matrix::from_vec(rows, n_out, y)?;
            }
        }
        let output = self.apply_head(&raw);
        Ok(Tape {
            net_id: self.id,
            version: self.version,
            activations,
            raw,
            output,
        })
    }

    fn apply_head(&self, raw: &Matrix) -> Matrix {
        match self.spec.head {
            Head::Identity => raw.clone(),
            Head::Tanh => raw.map(libm::tanh),
            Head::Gaussian => {
                let d = self.spec.output;
                let mut out = raw.clone();
                for r in 0..out.rows() {
                    for v in &mut out.row_mut(r)[d..] {
                        *v = bounded_variance(*v).0;
                    }
                }
                out
            }
        }
    }

    /// Backprop of `d_out = dL/d(output)` through the recorded pass.
    ///
    /// Fails with a usage error when `tape` was not recorded by this network
    /// at its current parameter version.
    pub fn backward(&self, tape: &Tape, d_out: &Matrix) -> Result<Gradients> {
        if tape.net_id != self.id || tape.version != self.version {
            return Err(Error::Usage(
                "backward needs a forward pass recorded on the current parameters".into(),
            ));
        }
        check_dim("Mlp::backward rows", tape.output.rows(), d_out.rows())?;
        check_dim("Mlp::backward cols", tape.output.cols(), d_out.cols())?;
        let rows = d_out.rows();
        let mut delta = match self.spec.head {
            Head::Identity => d_out.as_slice().to_vec(),
            Head::Tanh => d_out
                .as_slice()
                .iter()
                .zip(tape.output.as_slice())
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
            Head::Gaussian => {
                let d = self.spec.output;
                let mut delta = d_out.as_slice().to_vec();
                for r in 0..rows {
                    let raw = tape.raw.row(r);
                    let g = &mut delta[r * 2 * d..(r + 1) * 2 * d];
                    for c in d..2 * d {
                        g[c] *= bounded_variance(raw[c]).1;
                    }
                }
                delta
            }
        };

        let mut grads = vec![0.0; self.params.len()];
        let mut input_grad = Vec::new();
        for l in (0..self.layer_count()).rev() {
            let (w, _, n_in, n_out) = self.layer(l);
            let offset = self.layer_offset(l);
            let x = tape.activations[l].as_slice();
            {
                let (gw, gb) = grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for r in 0..rows {
                    for (gbo, &d) in gb.iter_mut().zip(&delta[r * n_out..(r + 1) * n_out]) {
                        *gbo += d;
                    }
                }
                // gw += x^T * delta
                gemm(n_in, rows, n_out, x, (1, n_in), &delta, (n_out, 1), gw, 1.0);
            }
            let mut dx = vec![0.0; rows * n_in];
            // dx = delta * w^T
            gemm(rows, n_out, n_in, &delta, (n_out, 1), w, (1, n_out), &mut dx, 0.0);
            if l > 0 {
                // ReLU mask; the first layer's input is not rectified.
                for (g, &xi) in dx.iter_mut().zip(x) {
                    if xi <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            if l == 0 {
                input_grad = dx;
            } else {
                delta = dx;
            }
        }
        Ok(Gradients {
            params: grads,
            input: Matrix::from_vec(rows, self.spec.input, input_grad)?,
        })
    }
}

/// Recorded forward pass, backprop of `d_out`, then one Adam update.
pub fn backward_and_step(net: &mut Mlp, tape: &Tape, d_out: &Matrix, opt: &mut Adam) -> Result<Gradients> {
    let grads = net.backward(tape, d_out)?;
    opt.step(net, &grads.params)?;
    Ok(grads)
}

/// `target <- (1 - tau) * target + tau * online`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<()> {
    if !target.same_shape(online) {
        return Err(Error::Config("soft_update between differently shaped networks".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Config(alloc::format!("tau must lie in [0, 1], got {tau}")));
    }
    if tau == 1.0 {
        target.params_mut().copy_from_slice(online.params());
        return Ok(());
    }
    for (t, o) in target.params_mut().iter_mut().zip(online.params()) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}

/// Maps a raw log-variance output to `(variance, d variance / d raw)`.
fn bounded_variance(raw: f64) -> (f64, f64) {
    let upper = LOG_VARIANCE_MAX - softplus(LOG_VARIANCE_MAX - raw);
    let log_var = LOG_VARIANCE_MIN + softplus(upper - LOG_VARIANCE_MIN);
    let var = libm::exp(log_var).clamp(VARIANCE_MIN, VARIANCE_MAX);
    let slope = var * sigmoid(upper - LOG_VARIANCE_MIN) * sigmoid(LOG_VARIANCE_MAX - raw);
    (var, slope)
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + libm::log1p(libm::exp(-x.abs()))
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

#[inline]
fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// `y = x W + b` for a row-major `(rows, n_in)` batch and `(n_in, n_out)` weights.
fn affine(x: &[f64], rows: usize, n_in: usize, w: &[f64], b: &[f64], n_out: usize, y: &mut Vec<f64>) {
    y.clear();
    y.reserve(rows * n_out);
    for _ in 0..rows {
        y.extend_from_slice(b);
    }
    // y += x * w, all row-major.
    gemm(rows, n_in, n_out, x, (n_in, 1), w, (n_out, 1), y, 1.0);
}

/// `c = a * b + beta * c` for an `m x k` by `k x n` product with explicit
/// (row, column) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    c: &mut [f64],
    beta: f64,
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: the slices cover every index reachable through the given
    // dimensions and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::AdamConfig;
    use crate::rng;

    /// Naive triple-loop forward pass used as an independent oracle.
    #[allow(clippy::needless_range_loop)]
    fn naive_forward(net: &Mlp, x: &Matrix) -> Vec<Vec<f64>> {
        let widths = &net.widths;
        let mut outputs = Vec::new();
        for r in 0..x.rows() {
            let mut a: Vec<f64> = x.row(r).to_vec();
            let mut offset = 0;
            for l in 0..widths.len() - 1 {
                let (n_in, n_out) = (widths[l], widths[l + 1]);
                let mut z = vec![0.0; n_out];
                for o in 0..n_out {
                    let mut s = net.params[offset + n_in * n_out + o];
                    for i in 0..n_in {
                        s += a[i] * net.params[offset + i * n_out + o];
                    }
                    z[o] = if l + 2 < widths.len() { s.max(0.0) } else { s };
                }
                offset += n_in * n_out + n_out;
                a = z;
            }
            outputs.push(a);
        }
        outputs
    }

    #[test]
    fn output_layer_redraw_touches_only_the_last_layer() {
        let spec = MlpSpec::uniform(2, 8, 3, 1, Head::Tanh);
        let mut rng = crate::rng::stream(0, 0);
        let mut net = Mlp::new(&spec, &mut rng).unwrap();
        let before = net.params().to_vec();
        net.init_output_layer(1e-3, &mut rng);
        let last = 8 + 1;
        let n = before.len();
        assert_eq!(&net.params()[..n - last], &before[..n - last]);
        assert!(net.params()[n - last..].iter().all(|p| p.abs() < 1e-3));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let spec = MlpSpec::new(2, &[], 2, Head::Identity);
        let net = Mlp::from_params(&spec, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let y = net.forward(&Matrix::from_rows(&[&[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(y.as_slice(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let spec = MlpSpec::uniform(3, 8, 4, 2, Head::Identity);
        let net = Mlp::zeros(&spec).unwrap();
        let x = Matrix::from_rows(&[&[1.0, -2.0, 3.0], &[0.5, 0.5, 0.5]]).unwrap();
        assert!(net.forward(&x).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn forward_matches_naive_loops() {
        let mut rng = rng::stream(11, 0);
        let spec = MlpSpec::new(3, &[5], 2, Head::Identity);
        let net = Mlp::new(&spec, &mut rng).unwrap();
        let x = Matrix::from_rows(&[&[0.3, -1.2, 2.0], &[1.0, 0.0, -0.5], &[-2.0, 0.7, 0.1]]).unwrap();
        let fast = net.forward(&x).unwrap();
        let slow = naive_forward(&net, &x);
        for r in 0..3 {
            for c in 0..2 {
                assert!((fast.get(r, c) - slow[r][c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let spec = MlpSpec::uniform(3, 4, 2, 1, Head::Identity);
        let net = Mlp::zeros(&spec).unwrap();
        assert!(matches!(
            net.forward(&Matrix::zeros(1, 2)),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn forward_is_bitwise_deterministic() {
        let mut rng = rng::stream(3, 0);
        let net = Mlp::new(&MlpSpec::uniform(2, 16, 4, 2, Head::Gaussian), &mut rng).unwrap();
        let x = Matrix::from_rows(&[&[0.1, 0.9], &[-3.0, 2.0]]).unwrap();
        let a = net.forward(&x).unwrap();
        let b = net.forward(&x).unwrap();
        assert_eq!(
            a.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(net.forward_recorded(&x).unwrap().output(), &a);
    }

    #[test]
    fn gaussian_variance_stays_in_bounds() {
        for raw in [-1e6, -100.0, -13.9, -5.0, 0.0, 5.0, 13.9, 100.0, 1e6] {
            let (v, slope) = bounded_variance(raw);
            assert!((VARIANCE_MIN..=VARIANCE_MAX).contains(&v), "raw {raw} -> {v}");
            assert!(slope >= 0.0);
        }
        assert!((bounded_variance(0.0).0 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn backward_requires_current_tape() {
        let mut rng = rng::stream(5, 0);
        let spec = MlpSpec::uniform(1, 4, 2, 1, Head::Identity);
        let mut net = Mlp::new(&spec, &mut rng).unwrap();
        let other = Mlp::new(&spec, &mut rng).unwrap();
        let x = Matrix::column(vec![0.5]);
        let foreign = other.forward_recorded(&x).unwrap();
        assert!(matches!(
            net.backward(&foreign, &Matrix::column(vec![1.0])),
            Err(Error::Usage(_))
        ));
        let tape = net.forward_recorded(&x).unwrap();
        let mut opt = Adam::new(AdamConfig::default(), &net);
        backward_and_step(&mut net, &tape, &Matrix::column(vec![1.0]), &mut opt).unwrap();
        assert!(matches!(
            net.backward(&tape, &Matrix::column(vec![1.0])),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn soft_update_blends() {
        let spec = MlpSpec::new(1, &[], 1, Head::Identity);
        let online = Mlp::from_params(&spec, vec![4.0, 4.0]).unwrap();
        let mut target = Mlp::from_params(&spec, vec![2.0, 2.0]).unwrap();
        soft_update(&mut target, &online, 0.0).unwrap();
        assert_eq!(target.params(), &[2.0, 2.0]);
        soft_update(&mut target, &online, 0.5).unwrap();
        assert_eq!(target.params(), &[3.0, 3.0]);
        soft_update(&mut target, &online, 1.0).unwrap();
        assert_eq!(target.params(), online.params());
    }

    #[test]
    fn soft_update_rejects_shape_mismatch() {
        let online = Mlp::zeros(&MlpSpec::new(1, &[], 1, Head::Identity)).unwrap();
        let mut target = Mlp::zeros(&MlpSpec::new(2, &[], 1, Head::Identity)).unwrap();
        assert!(matches!(soft_update(&mut target, &online, 0.1), Err(Error::Config(_))));
    }
}
