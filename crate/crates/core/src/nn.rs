//! Layer primitives with hand-written backward passes.
//!
//! Every layer stores its learnable tensors as [`Matrix`] values so the same
//! struct can hold either parameters or their gradients.

use rand::Rng;

use crate::tensor::{matmul, matmul_at_acc, Matrix};

pub const LN_EPS: f64 = 1e-5;
pub const INIT_STD: f64 = 0.02;

/// Visits named tensors in a fixed order.
pub trait Tensors {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix));
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix));
}

/// Affine map `y = x·W + b` with `W` stored as `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        Self {
            weight: Matrix::normal(inputs, outputs, INIT_STD, rng),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Matrix::zeros(inputs, outputs),
            bias: Matrix::zeros(1, outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = matmul(x, &self.weight);
        y.add_row(&self.bias);
        y
    }

    /// Single-row form used by the embedder.
    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.bias.data);
        for (p, &xp) in x.iter().enumerate() {
            if xp != 0.0 {
                for (o, w) in out.iter_mut().zip(self.weight.row(p)) {
                    *o += xp * w;
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Matrix, dy: &Matrix, grad: &mut Linear) -> Matrix {
        matmul_at_acc(x, dy, &mut grad.weight);
        dy.add_col_sums_into(&mut grad.bias);
        matmul(dy, &self.weight.transpose())
    }

    /// Parameter-only backward for a single row.
    pub fn backward_row(x: &[f64], dy: &[f64], grad: &mut Linear) {
        for (p, &xp) in x.iter().enumerate() {
            if xp != 0.0 {
                for (g, d) in grad.weight.row_mut(p).iter_mut().zip(dy) {
                    *g += xp * d;
                }
            }
        }
        for (g, d) in grad.bias.data.iter_mut().zip(dy) {
            *g += d;
        }
    }
}

impl Tensors for Linear {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(format!("{prefix}.weight"), &self.weight);
        f(format!("{prefix}.bias"), &self.bias);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Matrix,
    pub bias: Matrix,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    normalized: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNormCache {
    /// Pre-gain normalized rows.
    pub fn normalized(&self) -> &Matrix {
        &self.normalized
    }
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Matrix::filled(1, dim, 1.0),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gain: Matrix::zeros(1, dim),
            bias: Matrix::zeros(1, dim),
        }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, LayerNormCache) {
        let h = x.cols as f64;
        let mut normalized = Matrix::zeros(x.rows, x.cols);
        let mut out = Matrix::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / h;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std.push(inv);
            let n_row = normalized.row_mut(r);
            for (n, v) in n_row.iter_mut().zip(row) {
                *n = (v - mean) * inv;
            }
            let o_row = &mut out.data[r * x.cols..(r + 1) * x.cols];
            for c in 0..x.cols {
                o_row[c] = normalized.data[r * x.cols + c] * self.gain.data[c] + self.bias.data[c];
            }
        }
        (out, LayerNormCache { normalized, inv_std })
    }

    pub fn backward(&self, cache: &LayerNormCache, dy: &Matrix, grad: &mut LayerNorm) -> Matrix {
        let cols = dy.cols;
        let h = cols as f64;
        let mut dx = Matrix::zeros(dy.rows, cols);
        let mut dxhat = vec![0.0; cols];
        for r in 0..dy.rows {
            let dy_row = dy.row(r);
            let xhat = cache.normalized.row(r);
            for c in 0..cols {
                grad.gain.data[c] += dy_row[c] * xhat[c];
                grad.bias.data[c] += dy_row[c];
                dxhat[c] = dy_row[c] * self.gain.data[c];
            }
            let mean_d = dxhat.iter().sum::<f64>() / h;
            let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / h;
            let inv = cache.inv_std[r];
            for (c, out) in dx.row_mut(r).iter_mut().enumerate() {
                *out = inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
            }
        }
        dx
    }
}

impl Tensors for LayerNorm {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(format!("{prefix}.gain"), &self.gain);
        f(format!("{prefix}.bias"), &self.bias);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(format!("{prefix}.gain"), &mut self.gain);
        f(format!("{prefix}.bias"), &mut self.bias);
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct FeedForwardCache {
    input: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

impl FeedForward {
    pub fn new(hidden: usize, ffn_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            fc1: Linear::new(hidden, ffn_dim, rng),
            fc2: Linear::new(ffn_dim, hidden, rng),
        }
    }

    pub fn zeros(hidden: usize, ffn_dim: usize) -> Self {
        Self {
            fc1: Linear::zeros(hidden, ffn_dim),
            fc2: Linear::zeros(ffn_dim, hidden),
        }
    }

    pub fn forward(&self, x: &Matrix) -> (Matrix, FeedForwardCache) {
        let pre_act = self.fc1.forward(x);
        let mut act = pre_act.clone();
        act.data.iter_mut().for_each(|v| *v = gelu(*v));
        let out = self.fc2.forward(&act);
        (
            out,
            FeedForwardCache {
                input: x.clone(),
                pre_act,
                act,
            },
        )
    }

    pub fn backward(&self, cache: &FeedForwardCache, dy: &Matrix, grad: &mut FeedForward) -> Matrix {
        let mut d_act = self.fc2.backward(&cache.act, dy, &mut grad.fc2);
        for (d, x) in d_act.data.iter_mut().zip(&cache.pre_act.data) {
            *d *= gelu_grad(*x);
        }
        self.fc1.backward(&cache.input, &d_act, &mut grad.fc1)
    }
}

impl Tensors for FeedForward {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }
}

/// Inverted dropout mask; `None` when inactive.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut impl Rng) -> Option<Matrix> {
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let data = (0..rows * cols)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    Some(Matrix::from_vec(rows, cols, data))
}

pub fn apply_mask(x: &mut Matrix, mask: &Option<Matrix>) {
    if let Some(m) = mask {
        for (v, k) in x.data.iter_mut().zip(&m.data) {
            *v *= k;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_check(
        params: &mut Matrix,
        analytic: &Matrix,
        mut loss: impl FnMut(&Matrix) -> f64,
    ) -> f64 {
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..params.len() {
            let orig = params.data[i];
            params.data[i] = orig + eps;
            let up = loss(params);
            params.data[i] = orig - eps;
            let down = loss(params);
            params.data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        worst
    }

    // Loss = sum(out * probe) so dL/dout = probe.
    #[test]
    fn layer_norm_and_ffn_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Matrix::normal(3, 6, 1.0, &mut rng);
        let probe = Matrix::normal(3, 6, 1.0, &mut rng);
        let mut ln = LayerNorm::new(6);
        ln.gain = Matrix::normal(1, 6, 1.0, &mut rng);
        ln.bias = Matrix::normal(1, 6, 1.0, &mut rng);
        let (_, cache) = ln.forward(&x);
        let mut grad = LayerNorm::zeros(6);
        let dx = ln.backward(&cache, &probe, &mut grad);
        let score = |out: &Matrix| out.data.iter().zip(&probe.data).map(|(a, b)| a * b).sum::<f64>();

        let mut xs = x.clone();
        let ln_c = ln.clone();
        assert!(fd_check(&mut xs, &dx, |x| score(&ln_c.forward(x).0)) < 1e-4);
        let mut gain = ln.gain.clone();
        let bias = ln.bias.clone();
        let worst = fd_check(&mut gain, &grad.gain, |g| {
            score(&LayerNorm { gain: g.clone(), bias: bias.clone() }.forward(&x).0)
        });
        assert!(worst < 1e-4);

        let ffn = FeedForward::new(6, 5, &mut rng);
        let (_, cache) = ffn.forward(&x);
        let mut grad = FeedForward::zeros(6, 5);
        let dx = ffn.backward(&cache, &probe, &mut grad);
        let mut xs = x.clone();
        assert!(fd_check(&mut xs, &dx, |x| score(&ffn.forward(x).0)) < 1e-4);
        let mut w1 = ffn.fc1.weight.clone();
        let worst = fd_check(&mut w1, &grad.fc1.weight, |w| {
            let mut f = ffn.clone();
            f.fc1.weight = w.clone();
            score(&f.forward(&x).0)
        });
        assert!(worst < 1e-4);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Matrix::normal(4, 16, 3.0, &mut rng);
        let (_, cache) = LayerNorm::new(16).forward(&x);
        for r in 0..4 {
            let row = cache.normalized().row(r);
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for x in [-3.0, -0.5, 0.0, 0.7, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
