//! Transformer encoder-decoder with a token saliency head.

mod attention;
mod generate;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::embedder::{EmbedError, EmbedOptions, EmbeddedSequence, EmbeddingTables, FuseCache};
use crate::nn::{
    apply_mask, dropout_mask, FeedForward, FeedForwardCache, LayerNorm, LayerNormCache, Tensors,
    INIT_STD,
};
use crate::serializer::{InputSequence, Origin};
use crate::tensor::{dot, matmul, matmul_at_acc, matmul_bt, sigmoid, Matrix};

pub use attention::{Attention, AttentionCache, RelativeBias};
pub use generate::{generate, generate_ids, DecodeMode, InputError, Model};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PositionMode {
    /// Learned absolute position table added to the embeddings.
    Absolute,
    /// No position table; self-attention gets a learned relative bias.
    RelativeBias,
}

impl FromStr for PositionMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "absolute" => Ok(PositionMode::Absolute),
            "relative_bias" | "relative" => Ok(PositionMode::RelativeBias),
            other => Err(format!("unknown position mode {other:?}")),
        }
    }
}

impl fmt::Display for PositionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PositionMode::Absolute => "absolute",
            PositionMode::RelativeBias => "relative_bias",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub hidden: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub position_mode: PositionMode,
    pub appearance_dim: usize,
    /// Segment, location and appearance embeddings. Off gives the text-only model.
    pub layout: bool,
    /// Relative offsets beyond this share one bias bucket.
    pub rel_max_distance: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ffn_dim: 256,
            max_len: crate::serializer::DEFAULT_MAX_LEN,
            dropout: 0.1,
            position_mode: PositionMode::Absolute,
            appearance_dim: crate::embedder::DEFAULT_APPEARANCE_DIM,
            layout: true,
            rel_max_distance: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("enc_layers", self.enc_layers),
            ("dec_layers", self.dec_layers),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("appearance_dim", self.appearance_dim),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(format!("dropout {} must be in [0, 1)", self.dropout));
        }
        Ok(())
    }

    pub fn embed_options(&self) -> EmbedOptions {
        EmbedOptions {
            positions: self.position_mode == PositionMode::Absolute,
            layout: self.layout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer {
    pub self_attn: Attention,
    pub norm1: LayerNorm,
    pub cross_attn: Attention,
    pub norm2: LayerNorm,
    pub ffn: FeedForward,
    pub norm3: LayerNorm,
}

/// All learnable tensors. The same struct doubles as a gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub embeddings: EmbeddingTables,
    pub encoder: Vec<EncoderLayer>,
    pub decoder: Vec<DecoderLayer>,
    /// Per-head relative biases, `(2·max_distance + 1) × heads`; relative mode only.
    pub enc_rel_bias: Option<Matrix>,
    pub dec_rel_bias: Option<Matrix>,
    /// `|V| × H`
    pub output: Matrix,
    pub saliency_weight: Matrix,
    pub saliency_bias: Matrix,
}

impl ModelParams {
    pub fn new(config: &ModelConfig, vocab_size: usize, rng: &mut impl Rng) -> Self {
        let h = config.hidden;
        assert_eq!(h % config.heads, 0, "hidden size must divide into heads");
        let rel = |rng: &mut _| {
            (config.position_mode == PositionMode::RelativeBias)
                .then(|| Matrix::normal(2 * config.rel_max_distance + 1, config.heads, INIT_STD, rng))
        };
        let embeddings =
            EmbeddingTables::new(vocab_size, h, config.max_len, config.appearance_dim, rng);
        let encoder = (0..config.enc_layers)
            .map(|_| EncoderLayer {
                self_attn: Attention::new(h, rng),
                norm1: LayerNorm::new(h),
                ffn: FeedForward::new(h, config.ffn_dim, rng),
                norm2: LayerNorm::new(h),
            })
            .collect();
        let decoder = (0..config.dec_layers)
            .map(|_| DecoderLayer {
                self_attn: Attention::new(h, rng),
                norm1: LayerNorm::new(h),
                cross_attn: Attention::new(h, rng),
                norm2: LayerNorm::new(h),
                ffn: FeedForward::new(h, config.ffn_dim, rng),
                norm3: LayerNorm::new(h),
            })
            .collect();
        let enc_rel_bias = rel(rng);
        let dec_rel_bias = rel(rng);
        Self {
            embeddings,
            encoder,
            decoder,
            enc_rel_bias,
            dec_rel_bias,
            output: Matrix::normal(vocab_size, h, INIT_STD, rng),
            saliency_weight: Matrix::normal(1, h, INIT_STD, rng),
            saliency_bias: Matrix::zeros(1, 1),
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, m| m.fill(0.0));
        z
    }

    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, m| out.push((name, m)));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Matrix)> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |name, m| out.push((name, m)));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, a), (_, b)) in self.named_tensors_mut().into_iter().zip(other.named_tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.visit_mut("", &mut |_, m| m.scale(s));
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.is_finite())
    }
}

impl Tensors for ModelParams {
    fn visit<'a>(&'a self, _prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        self.embeddings.visit("embed", f);
        if let Some(b) = &self.enc_rel_bias {
            f("encoder.rel_bias".into(), b);
        }
        for (i, l) in self.encoder.iter().enumerate() {
            let p = format!("encoder.{i}");
            l.self_attn.visit(&format!("{p}.self_attn"), f);
            l.norm1.visit(&format!("{p}.norm1"), f);
            l.ffn.visit(&format!("{p}.ffn"), f);
            l.norm2.visit(&format!("{p}.norm2"), f);
        }
        if let Some(b) = &self.dec_rel_bias {
            f("decoder.rel_bias".into(), b);
        }
        for (i, l) in self.decoder.iter().enumerate() {
            let p = format!("decoder.{i}");
            l.self_attn.visit(&format!("{p}.self_attn"), f);
            l.norm1.visit(&format!("{p}.norm1"), f);
            l.cross_attn.visit(&format!("{p}.cross_attn"), f);
            l.norm2.visit(&format!("{p}.norm2"), f);
            l.ffn.visit(&format!("{p}.ffn"), f);
            l.norm3.visit(&format!("{p}.norm3"), f);
        }
        f("output".into(), &self.output);
        f("saliency.weight".into(), &self.saliency_weight);
        f("saliency.bias".into(), &self.saliency_bias);
    }

    fn visit_mut<'a>(&'a mut self, _prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        self.embeddings.visit_mut("embed", f);
        if let Some(b) = &mut self.enc_rel_bias {
            f("encoder.rel_bias".into(), b);
        }
        for (i, l) in self.encoder.iter_mut().enumerate() {
            let p = format!("encoder.{i}");
            l.self_attn.visit_mut(&format!("{p}.self_attn"), f);
            l.norm1.visit_mut(&format!("{p}.norm1"), f);
            l.ffn.visit_mut(&format!("{p}.ffn"), f);
            l.norm2.visit_mut(&format!("{p}.norm2"), f);
        }
        if let Some(b) = &mut self.dec_rel_bias {
            f("decoder.rel_bias".into(), b);
        }
        for (i, l) in self.decoder.iter_mut().enumerate() {
            let p = format!("decoder.{i}");
            l.self_attn.visit_mut(&format!("{p}.self_attn"), f);
            l.norm1.visit_mut(&format!("{p}.norm1"), f);
            l.cross_attn.visit_mut(&format!("{p}.cross_attn"), f);
            l.norm2.visit_mut(&format!("{p}.norm2"), f);
            l.ffn.visit_mut(&format!("{p}.ffn"), f);
            l.norm3.visit_mut(&format!("{p}.norm3"), f);
        }
        f("output".into(), &mut self.output);
        f("saliency.weight".into(), &mut self.saliency_weight);
        f("saliency.bias".into(), &mut self.saliency_bias);
    }
}

/// Last-layer encoder states.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub hidden: Matrix,
    pub mask: Vec<bool>,
}

/// Relevance of one OCR position.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyScore {
    /// Index into the input sequence.
    pub position: usize,
    pub roi_index: usize,
    pub token_index: usize,
    pub logit: f64,
    pub prob: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SaliencyScores {
    pub scores: Vec<SaliencyScore>,
}

impl SaliencyScores {
    pub fn probs(&self) -> Vec<f64> {
        self.scores.iter().map(|s| s.prob).collect()
    }
}

struct Dropout<'a> {
    rate: f64,
    rng: Option<&'a mut ChaCha8Rng>,
}

impl Dropout<'_> {
    fn mask(&mut self, rows: usize, cols: usize) -> Option<Matrix> {
        match self.rng.as_deref_mut() {
            Some(rng) => dropout_mask(rows, cols, self.rate, rng),
            None => None,
        }
    }
}

fn masked_backward(d: &Matrix, mask: &Option<Matrix>) -> Matrix {
    let mut out = d.clone();
    apply_mask(&mut out, mask);
    out
}

struct EncoderLayerCache {
    attn: AttentionCache,
    drop1: Option<Matrix>,
    norm1: LayerNormCache,
    ffn: FeedForwardCache,
    drop2: Option<Matrix>,
    norm2: LayerNormCache,
}

impl EncoderLayer {
    fn forward(
        &self,
        x: &Matrix,
        mask: &[bool],
        heads: usize,
        bias: Option<RelativeBias<'_>>,
        dropout: &mut Dropout<'_>,
    ) -> (Matrix, EncoderLayerCache) {
        let (mut a, attn) = self.self_attn.forward(x, x, mask, false, heads, bias);
        let drop1 = dropout.mask(a.rows, a.cols);
        apply_mask(&mut a, &drop1);
        a.add_assign(x);
        let (y1, norm1) = self.norm1.forward(&a);
        let (mut f, ffn) = self.ffn.forward(&y1);
        let drop2 = dropout.mask(f.rows, f.cols);
        apply_mask(&mut f, &drop2);
        f.add_assign(&y1);
        let (y2, norm2) = self.norm2.forward(&f);
        (
            y2,
            EncoderLayerCache {
                attn,
                drop1,
                norm1,
                ffn,
                drop2,
                norm2,
            },
        )
    }

    fn backward(
        &self,
        cache: &EncoderLayerCache,
        dy: &Matrix,
        grad: &mut EncoderLayer,
        bias_grad: Option<&mut Matrix>,
    ) -> Matrix {
        let dr2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
        let mut dy1 = self
            .ffn
            .backward(&cache.ffn, &masked_backward(&dr2, &cache.drop2), &mut grad.ffn);
        dy1.add_assign(&dr2);
        let dr1 = self.norm1.backward(&cache.norm1, &dy1, &mut grad.norm1);
        let (mut dq, dkv) = self.self_attn.backward(
            &cache.attn,
            &masked_backward(&dr1, &cache.drop1),
            &mut grad.self_attn,
            bias_grad,
        );
        dq.add_assign(&dkv);
        dq.add_assign(&dr1);
        dq
    }
}

struct DecoderLayerCache {
    self_attn: AttentionCache,
    drop1: Option<Matrix>,
    norm1: LayerNormCache,
    cross_attn: AttentionCache,
    drop2: Option<Matrix>,
    norm2: LayerNormCache,
    ffn: FeedForwardCache,
    drop3: Option<Matrix>,
    norm3: LayerNormCache,
}

impl DecoderLayer {
    fn forward(
        &self,
        x: &Matrix,
        enc: &EncoderOutput,
        heads: usize,
        bias: Option<RelativeBias<'_>>,
        dropout: &mut Dropout<'_>,
    ) -> (Matrix, DecoderLayerCache) {
        let self_mask = vec![true; x.rows];
        let (mut a, self_attn) = self.self_attn.forward(x, x, &self_mask, true, heads, bias);
        let drop1 = dropout.mask(a.rows, a.cols);
        apply_mask(&mut a, &drop1);
        a.add_assign(x);
        let (y1, norm1) = self.norm1.forward(&a);
        let (mut c, cross_attn) =
            self.cross_attn
                .forward(&y1, &enc.hidden, &enc.mask, false, heads, None);
        let drop2 = dropout.mask(c.rows, c.cols);
        apply_mask(&mut c, &drop2);
        c.add_assign(&y1);
        let (y2, norm2) = self.norm2.forward(&c);
        let (mut f, ffn) = self.ffn.forward(&y2);
        let drop3 = dropout.mask(f.rows, f.cols);
        apply_mask(&mut f, &drop3);
        f.add_assign(&y2);
        let (y3, norm3) = self.norm3.forward(&f);
        (
            y3,
            DecoderLayerCache {
                self_attn,
                drop1,
                norm1,
                cross_attn,
                drop2,
                norm2,
                ffn,
                drop3,
                norm3,
            },
        )
    }

    /// Returns `dL/dx`; the encoder-state gradient is accumulated into `d_enc`.
    fn backward(
        &self,
        cache: &DecoderLayerCache,
        dy: &Matrix,
        grad: &mut DecoderLayer,
        bias_grad: Option<&mut Matrix>,
        d_enc: &mut Matrix,
    ) -> Matrix {
        let dr3 = self.norm3.backward(&cache.norm3, dy, &mut grad.norm3);
        let mut dy2 = self
            .ffn
            .backward(&cache.ffn, &masked_backward(&dr3, &cache.drop3), &mut grad.ffn);
        dy2.add_assign(&dr3);
        let dr2 = self.norm2.backward(&cache.norm2, &dy2, &mut grad.norm2);
        let (mut dy1, dkv) = self.cross_attn.backward(
            &cache.cross_attn,
            &masked_backward(&dr2, &cache.drop2),
            &mut grad.cross_attn,
            None,
        );
        d_enc.add_assign(&dkv);
        dy1.add_assign(&dr2);
        let dr1 = self.norm1.backward(&cache.norm1, &dy1, &mut grad.norm1);
        let (mut dq, dkv) = self.self_attn.backward(
            &cache.self_attn,
            &masked_backward(&dr1, &cache.drop1),
            &mut grad.self_attn,
            bias_grad,
        );
        dq.add_assign(&dkv);
        dq.add_assign(&dr1);
        dq
    }
}

fn rel_bias<'a>(table: &'a Option<Matrix>, config: &ModelConfig) -> Option<RelativeBias<'a>> {
    table.as_ref().map(|t| RelativeBias {
        table: t,
        max_distance: config.rel_max_distance,
    })
}

struct EncoderCache {
    layers: Vec<EncoderLayerCache>,
}

fn run_encoder(
    input: &EmbeddedSequence,
    params: &ModelParams,
    config: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> (EncoderOutput, EncoderCache) {
    let bias = rel_bias(&params.enc_rel_bias, config);
    let mut x = input.hidden.clone();
    let mut layers = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let (y, cache) = layer.forward(&x, &input.mask, config.heads, bias, dropout);
        layers.push(cache);
        x = y;
    }
    (
        EncoderOutput {
            hidden: x,
            mask: input.mask.clone(),
        },
        EncoderCache { layers },
    )
}

struct DecoderCache {
    layers: Vec<DecoderLayerCache>,
    out: Matrix,
}

fn run_decoder(
    input: &Matrix,
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
    dropout: &mut Dropout<'_>,
) -> DecoderCache {
    let bias = rel_bias(&params.dec_rel_bias, config);
    let mut x = input.clone();
    let mut layers = Vec::with_capacity(params.decoder.len());
    for layer in &params.decoder {
        let (y, cache) = layer.forward(&x, enc, config.heads, bias, dropout);
        layers.push(cache);
        x = y;
    }
    DecoderCache { layers, out: x }
}

/// Runs the encoder stack over embedded input. Padded rows are excluded
/// from attention.
pub fn encode(seq: &EmbeddedSequence, params: &ModelParams, config: &ModelConfig) -> EncoderOutput {
    run_encoder(seq, params, config, &mut Dropout { rate: 0.0, rng: None }).0
}

/// `sigmoid(w·h + b)` for every OCR position.
pub fn saliency_scores(enc: &EncoderOutput, seq: &InputSequence, params: &ModelParams) -> SaliencyScores {
    let w = &params.saliency_weight.data;
    let b = params.saliency_bias.data[0];
    let scores = seq
        .positions
        .iter()
        .enumerate()
        .filter(|(k, p)| p.origin == Origin::Ocr && *k < enc.hidden.rows)
        .map(|(k, p)| {
            let logit = dot(w, enc.hidden.row(k)) + b;
            SaliencyScore {
                position: k,
                roi_index: p.roi_index.expect("OCR positions carry a ROI index"),
                token_index: p.token_index.expect("OCR positions carry a token index"),
                logit,
                prob: sigmoid(logit),
            }
        })
        .collect();
    SaliencyScores { scores }
}

/// Teacher-forced decoder. `target_ids` starts with `[BOS]`; row `t` of the
/// result scores the token at `t + 1`.
pub fn decode_train(
    target_ids: &[usize],
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Matrix, EmbedError> {
    let (emb, _) = params
        .embeddings
        .decoder_forward(target_ids, config.embed_options())?;
    let dec = run_decoder(&emb.hidden, enc, params, config, &mut Dropout { rate: 0.0, rng: None });
    Ok(matmul_bt(&dec.out, &params.output))
}

/// Logits for the next token after `prefix`.
pub(crate) fn next_token_logits(
    prefix: &[usize],
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>, EmbedError> {
    let (emb, _) = params.embeddings.decoder_forward(prefix, config.embed_options())?;
    let dec = run_decoder(&emb.hidden, enc, params, config, &mut Dropout { rate: 0.0, rng: None });
    let last = Matrix::from_vec(1, dec.out.cols, dec.out.row(dec.out.rows - 1).to_vec());
    Ok(matmul_bt(&last, &params.output).data)
}

/// Everything one training example needs for its backward pass.
pub struct ExampleForward {
    enc_embed: FuseCache,
    enc_drop: Option<Matrix>,
    encoder: EncoderCache,
    pub enc_out: EncoderOutput,
    pub saliency: SaliencyScores,
    dec_embed: FuseCache,
    dec_drop: Option<Matrix>,
    decoder: DecoderCache,
    pub logits: Matrix,
}

/// Full forward pass. `train_rng` enables dropout.
pub fn forward_example(
    seq: &InputSequence,
    decoder_input: &[usize],
    params: &ModelParams,
    config: &ModelConfig,
    train_rng: Option<&mut ChaCha8Rng>,
) -> Result<ExampleForward, EmbedError> {
    let mut dropout = Dropout {
        rate: config.dropout,
        rng: train_rng,
    };
    let options = config.embed_options();
    let (mut enc_in, enc_embed) = params.embeddings.fuse_forward(seq, options)?;
    let enc_drop = dropout.mask(enc_in.hidden.rows, enc_in.hidden.cols);
    apply_mask(&mut enc_in.hidden, &enc_drop);
    let (enc_out, encoder) = run_encoder(&enc_in, params, config, &mut dropout);
    let saliency = saliency_scores(&enc_out, seq, params);

    let (mut dec_in, dec_embed) = params.embeddings.decoder_forward(decoder_input, options)?;
    let dec_drop = dropout.mask(dec_in.hidden.rows, dec_in.hidden.cols);
    apply_mask(&mut dec_in.hidden, &dec_drop);
    let decoder = run_decoder(&dec_in.hidden, &enc_out, params, config, &mut dropout);
    let logits = matmul_bt(&decoder.out, &params.output);
    Ok(ExampleForward {
        enc_embed,
        enc_drop,
        encoder,
        enc_out,
        saliency,
        dec_embed,
        dec_drop,
        decoder,
        logits,
    })
}

/// Backpropagates `dL/dlogits` and `dL/d(saliency logit)` (one per entry of
/// `fwd.saliency`) into `grads`.
pub fn backward_example(
    fwd: &ExampleForward,
    d_logits: &Matrix,
    d_saliency: &[f64],
    params: &ModelParams,
    grads: &mut ModelParams,
) {
    assert_eq!(d_saliency.len(), fwd.saliency.scores.len());
    matmul_at_acc(d_logits, &fwd.decoder.out, &mut grads.output);
    let mut dy = matmul(d_logits, &params.output);
    let mut d_enc = Matrix::zeros(fwd.enc_out.hidden.rows, fwd.enc_out.hidden.cols);
    for (i, layer) in params.decoder.iter().enumerate().rev() {
        dy = layer.backward(
            &fwd.decoder.layers[i],
            &dy,
            &mut grads.decoder[i],
            grads.dec_rel_bias.as_mut(),
            &mut d_enc,
        );
    }
    apply_mask(&mut dy, &fwd.dec_drop);
    params
        .embeddings
        .fuse_backward(&fwd.dec_embed, &dy, &mut grads.embeddings);

    for (score, &d) in fwd.saliency.scores.iter().zip(d_saliency) {
        if d == 0.0 {
            continue;
        }
        let h = fwd.enc_out.hidden.row(score.position);
        for (g, hv) in grads.saliency_weight.data.iter_mut().zip(h) {
            *g += d * hv;
        }
        grads.saliency_bias.data[0] += d;
        let row = d_enc.row_mut(score.position);
        for (r, w) in row.iter_mut().zip(&params.saliency_weight.data) {
            *r += d * w;
        }
    }
    let mut dx = d_enc;
    for (i, layer) in params.encoder.iter().enumerate().rev() {
        dx = layer.backward(
            &fwd.encoder.layers[i],
            &dx,
            &mut grads.encoder[i],
            grads.enc_rel_bias.as_mut(),
        );
    }
    apply_mask(&mut dx, &fwd.enc_drop);
    params
        .embeddings
        .fuse_backward(&fwd.enc_embed, &dx, &mut grads.embeddings);
}
