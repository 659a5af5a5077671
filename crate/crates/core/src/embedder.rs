//! Fused input embeddings.
//!
//! Encoder positions embed as `LN(token + pos + seg + loc + app)`. The
//! segment, location and appearance terms are zero for `[S]`, `[SEP]` and
//! question tokens; the decoder uses `LN(token + pos)` only.

use rand::Rng;
use thiserror::Error;

use crate::corpus::RoiClass;
use crate::nn::{LayerNorm, LayerNormCache, Linear, Tensors, INIT_STD};
use crate::serializer::{Appearance, InputSequence, Origin};
use crate::tensor::Matrix;

/// Default appearance feature size at desk scale.
pub const DEFAULT_APPEARANCE_DIM: usize = 64;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedError {
    #[error("token id {id} is outside the vocabulary of {vocab_size}")]
    TokenOutOfRange { id: usize, vocab_size: usize },
    #[error("sequence of length {len} exceeds the maximum of {max_len}")]
    TooLong { len: usize, max_len: usize },
    #[error("appearance vector has {got} features, the model expects {expected}")]
    AppearanceDim { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTables {
    pub token: Matrix,
    pub position: Matrix,
    pub segment: Matrix,
    pub location: Linear,
    pub appearance: Linear,
    pub norm: LayerNorm,
}

/// Which of the additive terms take part in the sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedOptions {
    /// Absolute position embeddings; off when attention carries relative biases.
    pub positions: bool,
    /// Segment, location and appearance terms; off for the text-only model.
    pub layout: bool,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            positions: true,
            layout: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSequence {
    pub hidden: Matrix,
    /// `true` for real positions, `false` for padding.
    pub mask: Vec<bool>,
}

impl EmbeddedSequence {
    pub fn new(hidden: Matrix) -> Self {
        let mask = vec![true; hidden.rows];
        Self { hidden, mask }
    }

    pub fn len(&self) -> usize {
        self.hidden.rows
    }

    pub fn is_empty(&self) -> bool {
        self.hidden.rows == 0
    }

    /// Appends zero rows flagged as padding.
    pub fn padded(&self, len: usize) -> Self {
        let mut hidden = Matrix::zeros(len.max(self.len()), self.hidden.cols);
        hidden.data[..self.hidden.data.len()].copy_from_slice(&self.hidden.data);
        let mut mask = self.mask.clone();
        mask.resize(hidden.rows, false);
        Self { hidden, mask }
    }
}

/// Per-position inputs recorded for the backward pass.
#[derive(Debug, Clone)]
pub struct FuseCache {
    token_ids: Vec<usize>,
    segments: Vec<Option<usize>>,
    locations: Vec<Option<[f64; 4]>>,
    /// ReLU-activated appearance features (empty slice for missing ones).
    appearance: Vec<Option<Vec<f64>>>,
    options: EmbedOptions,
    norm: LayerNormCache,
}

pub fn relu(features: &[f64]) -> Vec<f64> {
    features.iter().map(|v| v.max(0.0)).collect()
}

impl EmbeddingTables {
    pub fn new(
        vocab_size: usize,
        hidden: usize,
        max_len: usize,
        appearance_dim: usize,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            token: Matrix::normal(vocab_size, hidden, INIT_STD, rng),
            position: Matrix::normal(max_len, hidden, INIT_STD, rng),
            segment: Matrix::normal(RoiClass::ALL.len(), hidden, INIT_STD, rng),
            location: Linear::new(4, hidden, rng),
            appearance: Linear::new(appearance_dim, hidden, rng),
            norm: LayerNorm::new(hidden),
        }
    }

    pub fn zeros(vocab_size: usize, hidden: usize, max_len: usize, appearance_dim: usize) -> Self {
        Self {
            token: Matrix::zeros(vocab_size, hidden),
            position: Matrix::zeros(max_len, hidden),
            segment: Matrix::zeros(RoiClass::ALL.len(), hidden),
            location: Linear::zeros(4, hidden),
            appearance: Linear::zeros(appearance_dim, hidden),
            norm: LayerNorm::zeros(hidden),
        }
    }

    pub fn hidden(&self) -> usize {
        self.token.cols
    }

    pub fn vocab_size(&self) -> usize {
        self.token.rows
    }

    pub fn max_len(&self) -> usize {
        self.position.rows
    }

    pub fn appearance_dim(&self) -> usize {
        self.appearance.inputs()
    }

    /// `W·x_loc + b`, no nonlinearity.
    pub fn location_embedding(&self, loc: &[f64; 4]) -> Vec<f64> {
        let mut out = vec![0.0; self.hidden()];
        self.location.apply(loc, &mut out);
        out
    }

    /// Affine map of `ReLU(features)`.
    pub fn appearance_embedding(&self, features: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.hidden()];
        self.appearance.apply(&relu(features), &mut out);
        out
    }

    fn check_ids(&self, ids: &[usize]) -> Result<(), EmbedError> {
        if ids.len() > self.max_len() {
            return Err(EmbedError::TooLong {
                len: ids.len(),
                max_len: self.max_len(),
            });
        }
        match ids.iter().find(|id| **id >= self.vocab_size()) {
            Some(&id) => Err(EmbedError::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size(),
            }),
            None => Ok(()),
        }
    }

    pub fn fuse_forward(
        &self,
        seq: &InputSequence,
        options: EmbedOptions,
    ) -> Result<(EmbeddedSequence, FuseCache), EmbedError> {
        let token_ids = seq.token_ids();
        self.check_ids(&token_ids)?;
        let h = self.hidden();
        let n = seq.len();
        let mut sum = Matrix::zeros(n, h);
        let mut segments = Vec::with_capacity(n);
        let mut locations = Vec::with_capacity(n);
        let mut appearance = Vec::with_capacity(n);
        let mut scratch = vec![0.0; h];
        for (k, pos) in seq.positions.iter().enumerate() {
            let row = sum.row_mut(k);
            row.copy_from_slice(self.token.row(pos.token_id));
            if options.positions {
                add(row, self.position.row(k));
            }
            let layout = options.layout && !matches!(pos.origin, Origin::Special | Origin::Question);
            let seg = pos.seg_class.filter(|_| layout).map(RoiClass::index);
            if let Some(s) = seg {
                add(row, self.segment.row(s));
            }
            let loc = pos.loc.filter(|_| layout);
            if let Some(l) = &loc {
                self.location.apply(l, &mut scratch);
                add(row, &scratch);
            }
            let app = match pos.appearance.as_ref().filter(|_| layout) {
                None => None,
                Some(Appearance::Missing) => Some(vec![0.0; self.appearance_dim()]),
                Some(Appearance::Features(f)) => {
                    if f.len() != self.appearance_dim() {
                        return Err(EmbedError::AppearanceDim {
                            expected: self.appearance_dim(),
                            got: f.len(),
                        });
                    }
                    Some(relu(f))
                }
            };
            if let Some(a) = &app {
                self.appearance.apply(a, &mut scratch);
                add(row, &scratch);
            }
            segments.push(seg);
            locations.push(loc);
            appearance.push(app);
        }
        let (hidden, norm) = self.norm.forward(&sum);
        Ok((
            EmbeddedSequence::new(hidden),
            FuseCache {
                token_ids,
                segments,
                locations,
                appearance,
                options,
                norm,
            },
        ))
    }

    pub fn fuse_backward(&self, cache: &FuseCache, d_out: &Matrix, grad: &mut EmbeddingTables) {
        let d_sum = self.norm.backward(&cache.norm, d_out, &mut grad.norm);
        for (k, &id) in cache.token_ids.iter().enumerate() {
            let d = d_sum.row(k);
            add(grad.token.row_mut(id), d);
            if cache.options.positions {
                add(grad.position.row_mut(k), d);
            }
            if let Some(s) = cache.segments[k] {
                add(grad.segment.row_mut(s), d);
            }
            if let Some(l) = &cache.locations[k] {
                Linear::backward_row(l, d, &mut grad.location);
            }
            if let Some(a) = &cache.appearance[k] {
                Linear::backward_row(a, d, &mut grad.appearance);
            }
        }
    }

    pub fn decoder_forward(
        &self,
        ids: &[usize],
        options: EmbedOptions,
    ) -> Result<(EmbeddedSequence, FuseCache), EmbedError> {
        self.check_ids(ids)?;
        let mut sum = Matrix::zeros(ids.len(), self.hidden());
        for (k, &id) in ids.iter().enumerate() {
            let row = sum.row_mut(k);
            row.copy_from_slice(self.token.row(id));
            if options.positions {
                add(row, self.position.row(k));
            }
        }
        let (hidden, norm) = self.norm.forward(&sum);
        Ok((
            EmbeddedSequence::new(hidden),
            FuseCache {
                token_ids: ids.to_vec(),
                segments: vec![None; ids.len()],
                locations: vec![None; ids.len()],
                appearance: vec![None; ids.len()],
                options,
                norm,
            },
        ))
    }
}

fn add(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Encoder-side embedding with every term enabled.
pub fn fuse(seq: &InputSequence, tables: &EmbeddingTables) -> Result<EmbeddedSequence, EmbedError> {
    tables
        .fuse_forward(seq, EmbedOptions::default())
        .map(|(e, _)| e)
}

/// Decoder-side embedding, `LN(token + pos)`.
pub fn decoder_embedding(
    ids: &[usize],
    tables: &EmbeddingTables,
) -> Result<EmbeddedSequence, EmbedError> {
    tables
        .decoder_forward(ids, EmbedOptions::default())
        .map(|(e, _)| e)
}

impl Tensors for EmbeddingTables {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Matrix)) {
        f(format!("{prefix}.token"), &self.token);
        f(format!("{prefix}.position"), &self.position);
        f(format!("{prefix}.segment"), &self.segment);
        self.location.visit(&format!("{prefix}.location"), f);
        self.appearance.visit(&format!("{prefix}.appearance"), f);
        self.norm.visit(&format!("{prefix}.norm"), f);
    }
    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Matrix)) {
        f(format!("{prefix}.token"), &mut self.token);
        f(format!("{prefix}.position"), &mut self.position);
        f(format!("{prefix}.segment"), &mut self.segment);
        self.location.visit_mut(&format!("{prefix}.location"), f);
        self.appearance.visit_mut(&format!("{prefix}.appearance"), f);
        self.norm.visit_mut(&format!("{prefix}.norm"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DocumentRecord, OcrToken, QaPair, Roi};
    use crate::serializer::{build_input_sequence, Vocabulary};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (InputSequence, usize) {
        let doc = DocumentRecord {
            width: 200,
            height: 100,
            rois: vec![
                Roi {
                    id: 0,
                    class: RoiClass::Heading,
                    bbox: [10., 5., 190., 20.].into(),
                    tokens: vec![OcrToken { form: "Annual".into(), bbox: [12., 6., 60., 18.].into() }],
                    appearance: Some(vec![0.5, -1.0, 2.0]),
                },
                Roi {
                    id: 1,
                    class: RoiClass::Data,
                    bbox: [10., 30., 190., 90.].into(),
                    tokens: vec![],
                    appearance: None,
                },
            ],
            qas: vec![QaPair { question: "what?".into(), answer: "x".into(), relevant_roi_ids: vec![] }],
        };
        let vocab = Vocabulary::build(std::slice::from_ref(&doc), 64);
        (build_input_sequence("what year?", &doc, &vocab, 32).unwrap(), vocab.len())
    }

    fn tables(v: usize, seed: u64) -> EmbeddingTables {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = EmbeddingTables::new(v, 8, 32, 3, &mut rng);
        t.location.bias = Matrix::normal(1, 8, 0.5, &mut rng);
        t.appearance.bias = Matrix::normal(1, 8, 0.5, &mut rng);
        t.norm.gain = Matrix::normal(1, 8, 1.0, &mut rng);
        t.norm.bias = Matrix::normal(1, 8, 1.0, &mut rng);
        t
    }

    #[test]
    fn location_embedding_is_affine() {
        let mut t = EmbeddingTables::zeros(20, 8, 4, 3);
        assert_eq!(t.location_embedding(&[0.3, 0.1, 0.9, 0.4]), vec![0.0; 8]);
        for i in 0..4 {
            t.location.weight.set(i, i, 1.0);
        }
        assert_eq!(&t.location_embedding(&[0.0, 0.0, 1.0, 1.0])[..4], &[0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn appearance_relu_kills_negative_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = EmbeddingTables::new(20, 8, 4, 3, &mut rng);
        t.appearance.bias = Matrix::normal(1, 8, 1.0, &mut rng);
        let bias = t.appearance.bias.data.clone();
        assert_eq!(t.appearance_embedding(&[-1.0, -2.0, -0.1]), bias);
        assert_eq!(t.appearance_embedding(&[0.0; 3]), bias);
    }

    #[test]
    fn zero_tables_give_the_norm_bias() {
        let (seq, v) = fixture();
        let mut t = EmbeddingTables::zeros(v, 8, 32, 3);
        t.norm.gain = Matrix::filled(1, 8, 3.0);
        t.norm.bias = Matrix::filled(1, 8, 0.25);
        let e = fuse(&seq, &t).unwrap();
        assert!(e.hidden.row(0).iter().all(|v| *v == 0.25));
    }

    #[test]
    fn rejects_bad_inputs() {
        let (mut seq, v) = fixture();
        let t = tables(v, 2);
        let mut short = tables(v, 2);
        short.position = Matrix::zeros(3, 8);
        assert!(matches!(fuse(&seq, &short), Err(EmbedError::TooLong { .. })));
        seq.positions[1].token_id = v + 4;
        assert_eq!(
            fuse(&seq, &t),
            Err(EmbedError::TokenOutOfRange { id: v + 4, vocab_size: v })
        );
        let (mut seq, _) = fixture();
        let last = seq.positions.len() - 1;
        seq.positions[last].appearance = Some(Appearance::Features(vec![1.0; 5].into()));
        assert!(matches!(fuse(&seq, &t), Err(EmbedError::AppearanceDim { .. })));
        assert!(decoder_embedding(&[], &t).unwrap().is_empty());
    }

    #[test]
    fn question_positions_ignore_layout_tables() {
        let (seq, v) = fixture();
        let t = tables(v, 3);
        let mut text_only = t.clone();
        text_only.segment.fill(0.0);
        text_only.location = Linear::zeros(4, 8);
        text_only.appearance = Linear::zeros(3, 8);
        let a = fuse(&seq, &t).unwrap();
        let b = fuse(&seq, &text_only).unwrap();
        for (k, p) in seq.positions.iter().enumerate() {
            let same = a.hidden.row(k) == b.hidden.row(k);
            assert_eq!(same, matches!(p.origin, Origin::Special | Origin::Question), "{k}");
        }
    }

    #[test]
    fn decoder_rows_differ_only_by_position() {
        let (_, v) = fixture();
        let mut t = tables(v, 4);
        let e = decoder_embedding(&[16, 16], &t).unwrap();
        assert_ne!(e.hidden.row(0), e.hidden.row(1));
        let p0 = t.position.row(0).to_vec();
        t.position.row_mut(1).copy_from_slice(&p0);
        let e = decoder_embedding(&[16, 16], &t).unwrap();
        assert_eq!(e.hidden.row(0), e.hidden.row(1));
    }
}
