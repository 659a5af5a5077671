//! Answer generation: greedy and beam search.

use std::str::FromStr;

use crate::corpus::DocumentRecord;
use crate::embedder::EmbedError;
use crate::serializer::{build_input_sequence, SerializeError, Vocabulary, BOS, EOS};
use crate::tensor::log_softmax;

use super::{encode, next_token_logits, EncoderOutput, ModelConfig, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Beam(usize),
}

impl FromStr for DecodeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "greedy" {
            return Ok(DecodeMode::Greedy);
        }
        let k = s
            .strip_prefix("beam")
            .map(|r| r.trim_start_matches([':', '(']).trim_end_matches(')'))
            .and_then(|r| r.parse::<usize>().ok())
            .filter(|k| *k >= 1)
            .ok_or_else(|| format!("decode mode must be `greedy` or `beam:K`, got {s:?}"))?;
        Ok(DecodeMode::Beam(k))
    }
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Generated token ids, without `[BOS]` and including the final `[EOS]` if
/// one was produced.
pub fn generate_ids(
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
    mode: DecodeMode,
    max_len: usize,
) -> Result<Vec<usize>, EmbedError> {
    let max_len = max_len.min(config.max_len.saturating_sub(1));
    match mode {
        DecodeMode::Greedy => {
            let mut prefix = vec![BOS];
            while prefix.len() <= max_len {
                let next = argmax(&next_token_logits(&prefix, enc, params, config)?);
                prefix.push(next);
                if next == EOS {
                    break;
                }
            }
            Ok(prefix.split_off(1))
        }
        DecodeMode::Beam(k) => beam_search(enc, params, config, k.max(1), max_len),
    }
}

struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
}

impl Hypothesis {
    /// Log-probability divided by generated length (exponent 1).
    fn normalized(&self) -> f64 {
        self.log_prob / (self.tokens.len() - 1).max(1) as f64
    }
}

fn beam_search(
    enc: &EncoderOutput,
    params: &ModelParams,
    config: &ModelConfig,
    k: usize,
    max_len: usize,
) -> Result<Vec<usize>, EmbedError> {
    let mut active = vec![Hypothesis {
        tokens: vec![BOS],
        log_prob: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        // (parent, token, cumulative log-prob)
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        for (h, hyp) in active.iter().enumerate() {
            let lp = log_softmax(&next_token_logits(&hyp.tokens, enc, params, config)?);
            candidates.extend(lp.iter().enumerate().map(|(t, l)| (h, t, hyp.log_prob + l)));
        }
        // every candidate has the same length here, so raw order equals
        // normalized order
        candidates.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
        let mut next = Vec::with_capacity(k);
        for (parent, token, log_prob) in candidates.into_iter().take(k) {
            let mut tokens = active[parent].tokens.clone();
            tokens.push(token);
            let hyp = Hypothesis { tokens, log_prob };
            if token == EOS {
                finished.push(hyp);
            } else {
                next.push(hyp);
            }
        }
        active = next;
        if active.is_empty() || finished.len() >= k {
            break;
        }
    }
    finished.extend(active);
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.normalized().total_cmp(&b.normalized()).then(j.cmp(i)))
        .map(|(i, _)| i)
        .expect("at least one hypothesis");
    let mut tokens = finished.swap_remove(best).tokens;
    Ok(tokens.split_off(1))
}

/// Errors raised while preparing model inputs.
#[derive(Debug, thiserror::Error)]
pub enum InputError {
    #[error(transparent)]
    Serialize(#[from] SerializeError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Generates an answer string for `question` about `doc`.
pub fn generate(
    question: &str,
    doc: &DocumentRecord,
    vocab: &Vocabulary,
    params: &ModelParams,
    config: &ModelConfig,
    mode: DecodeMode,
    max_len: usize,
) -> Result<String, InputError> {
    let seq = build_input_sequence(question, doc, vocab, config.max_len)?;
    let (emb, _) = params.embeddings.fuse_forward(&seq, config.embed_options())?;
    let enc = encode(&emb, params, config);
    let ids = generate_ids(&enc, params, config, mode, max_len)?;
    Ok(vocab.detokenize(&ids))
}

/// A configured model with its vocabulary.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ModelParams,
}

impl Model {
    pub fn generate(
        &self,
        question: &str,
        doc: &DocumentRecord,
        mode: DecodeMode,
        max_len: usize,
    ) -> Result<String, InputError> {
        generate(question, doc, &self.vocab, &self.params, &self.config, mode, max_len)
    }
}
