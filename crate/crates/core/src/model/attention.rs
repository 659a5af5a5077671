//! Multi-head scaled dot-product attention.

use rand::Rng;

use crate::nn::{Linear, Tensors};
use crate::tensor::{dot, softmax_in_place, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

/// Learned per-head bias indexed by the clipped offset `key - query`.
#[derive(Clone, Copy)]
pub struct RelativeBias<'a> {
    pub table: &'a Matrix,
    pub max_distance: usize,
}

impl RelativeBias<'_> {
    #[inline]
    pub fn bucket(max_distance: usize, query: usize, key: usize) -> usize {
        let d = max_distance as isize;
        ((key as isize - query as isize).clamp(-d, d) + d) as usize
    }
}

pub struct AttentionCache {
    x_query: Matrix,
    x_kv: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities, one `n × m` map per head.
    probs: Vec<Matrix>,
    context: Matrix,
    max_distance: usize,
}

impl AttentionCache {
    pub fn probs(&self) -> &[Matrix] {
        &self.probs
    }
}

impl Attention {
    pub fn new(hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            query: Linear::new(hidden, hidden, rng),
            key: Linear::new(hidden, hidden, rng),
            value: Linear::new(hidden, hidden, rng),
            output: Linear::new(hidden, hidden, rng),
        }
    }

    pub fn zeros(hidden: usize) -> Self {
        Self {
            query: Linear::zeros(hidden, hidden),
            key: Linear::zeros(hidden, hidden),
            value: Linear::zeros(hidden, hidden),
            output: Linear::zeros(hidden, hidden),
        }
    }

    /// `key_mask[j]` is false for padded keys. With `causal`, query `i` sees
    /// keys `0..=i` only. A query with no visible key gets a zero context.
    pub fn forward(
        &self,
        x_query: &Matrix,
        x_kv: &Matrix,
        key_mask: &[bool],
        causal: bool,
        heads: usize,
        bias: Option<RelativeBias<'_>>,
    ) -> (Matrix, AttentionCache) {
        let n = x_query.rows;
        let m = x_kv.rows;
        let hidden = self.query.outputs();
        let dh = hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let q = self.query.forward(x_query);
        let k = self.key.forward(x_kv);
        let v = self.value.forward(x_kv);
        let mut context = Matrix::zeros(n, hidden);
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = Matrix::zeros(n, m);
            for i in 0..n {
                let qi = &q.row(i)[cols.clone()];
                let row = p.row_mut(i);
                for j in 0..m {
                    row[j] = if !key_mask[j] || (causal && j > i) {
                        f64::NEG_INFINITY
                    } else {
                        let mut s = dot(qi, &k.row(j)[cols.clone()]) * scale;
                        if let Some(b) = bias {
                            s += b.table.get(RelativeBias::bucket(b.max_distance, i, j), h);
                        }
                        s
                    };
                }
                softmax_in_place(row);
                let ctx = &mut context.data[i * hidden + h * dh..i * hidden + (h + 1) * dh];
                for (j, &pij) in row.iter().enumerate() {
                    if pij != 0.0 {
                        for (c, vj) in ctx.iter_mut().zip(&v.row(j)[cols.clone()]) {
                            *c += pij * vj;
                        }
                    }
                }
            }
            probs.push(p);
        }
        let out = self.output.forward(&context);
        (
            out,
            AttentionCache {
                x_query: x_query.clone(),
                x_kv: x_kv.clone(),
                q,
                k,
                v,
                probs,
                context,
                max_distance: bias.map_or(0, |b| b.max_distance),
            },
        )
    }

    /// Returns `(dL/dx_query, dL/dx_kv)`.
    pub fn backward(
        &self,
        cache: &AttentionCache,
        d_out: &Matrix,
        grad: &mut Attention,
        mut bias_grad: Option<&mut Matrix>,
    ) -> (Matrix, Matrix) {
        let heads = cache.probs.len();
        let n = cache.q.rows;
        let m = cache.k.rows;
        let hidden = cache.q.cols;
        let dh = hidden / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let d_context = self.output.backward(&cache.context, d_out, &mut grad.output);
        let mut dq = Matrix::zeros(n, hidden);
        let mut dk = Matrix::zeros(m, hidden);
        let mut dv = Matrix::zeros(m, hidden);
        let mut dp = vec![0.0; m];
        for (h, p) in cache.probs.iter().enumerate() {
            let off = h * dh;
            for i in 0..n {
                let dci = &d_context.row(i)[off..off + dh];
                let pi = p.row(i);
                for j in 0..m {
                    dp[j] = if pi[j] == 0.0 { 0.0 } else { dot(dci, &cache.v.row(j)[off..off + dh]) };
                    if pi[j] != 0.0 {
                        let dvj = &mut dv.data[j * hidden + off..j * hidden + off + dh];
                        for (d, c) in dvj.iter_mut().zip(dci) {
                            *d += pi[j] * c;
                        }
                    }
                }
                let weighted: f64 = pi.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..m {
                    if pi[j] == 0.0 {
                        continue;
                    }
                    let ds = pi[j] * (dp[j] - weighted);
                    if let Some(g) = bias_grad.as_deref_mut() {
                        let b = RelativeBias::bucket(cache.max_distance, i, j);
                        g.data[b * heads + h] += ds;
                    }
                    let ds = ds * scale;
                    let qi_off = i * hidden + off;
                    let kj_off = j * hidden + off;
                    for c in 0..dh {
                        dq.data[qi_off + c] += ds * cache.k.data[kj_off + c];
                        dk.data[kj_off + c] += ds * cache.q.data[qi_off + c];
                    }
                }
            }
        }
        let dx_query = self.query.backward(&cache.x_query, &dq, &mut grad.query);
        let mut dx_kv = self.key.backward(&cache.x_kv, &dk, &mut grad.key);
        dx_kv.add_assign(&self.value.backward(&cache.x_kv, &dv, &mut grad.value));
        (dx_query, dx_kv)
    }
}

impl Tensors for Attention {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.query.visit(&format!("{prefix}.query"), f);
        self.key.visit(&format!("{prefix}.key"), f);
        self.value.visit(&format!("{prefix}.value"), f);
        self.output.visit(&format!("{prefix}.output"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.query.visit_mut(&format!("{prefix}.query"), f);
        self.key.visit_mut(&format!("{prefix}.key"), f);
        self.value.visit_mut(&format!("{prefix}.value"), f);
        self.output.visit_mut(&format!("{prefix}.output"), f);
    }
}
