//! Pseudo saliency labels, the training losses and the optimization loop.

mod adam;
mod labels;
mod loss;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::corpus::{examples, DocumentRecord, QaPair};
use crate::embedder::EmbedError;
use crate::metrics::{rouge_l, EvalPair};
use crate::model::{
    backward_example, encode, forward_example, generate_ids, DecodeMode, InputError, ModelConfig,
    ModelParams,
};
use crate::serializer::{build_input_sequence, tokenize, InputSequence, Vocabulary, BOS, EOS};

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use labels::{pseudo_saliency_labels, SaliencyLabel, SaliencyLabels};
pub use loss::{multitask_loss, nll_loss, nll_loss_grad, saliency_loss, saliency_loss_grad};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("the training split has no questions")]
    EmptyTrainingSet,
    #[error("{logits} logit rows for {targets} target tokens")]
    LengthMismatch { logits: usize, targets: usize },
    #[error("loss diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error(transparent)]
    Input(#[from] InputError),
}

impl From<EmbedError> for TrainError {
    fn from(e: EmbedError) -> Self {
        TrainError::Input(InputError::Embed(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Weight of the saliency loss.
    pub gamma_sal: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Target value for positive saliency labels.
    pub label_smooth_pos: f64,
    /// Validation runs every this many epochs, and after the last one.
    pub eval_every: usize,
    /// Generation limit used for validation.
    pub max_answer_len: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma_sal: 1.0,
            lr: 3e-4,
            batch_size: 8,
            max_epochs: 30,
            seed: 0,
            label_smooth_pos: 0.9,
            eval_every: 1,
            max_answer_len: 32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: String| Err(TrainError::Config(m));
        if !(self.gamma_sal >= 0.0 && self.gamma_sal.is_finite()) {
            return err(format!("gamma_sal must be >= 0, got {}", self.gamma_sal));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("lr must be > 0, got {}", self.lr));
        }
        if !(self.label_smooth_pos > 0.0 && self.label_smooth_pos <= 1.0) {
            return err(format!(
                "label_smooth_pos must be in (0, 1], got {}",
                self.label_smooth_pos
            ));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("eval_every", self.eval_every),
            ("max_answer_len", self.max_answer_len),
        ] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }
}

/// A question ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub seq: InputSequence,
    /// `[BOS]` followed by the answer ids.
    pub decoder_input: Vec<usize>,
    /// The answer ids followed by `[EOS]`.
    pub targets: Vec<usize>,
    pub labels: SaliencyLabels,
    pub answer: String,
}

pub fn prepare_example(
    doc: &DocumentRecord,
    qa: &QaPair,
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<Example, InputError> {
    let seq = build_input_sequence(&qa.question, doc, vocab, config.max_len)?;
    let mut answer: Vec<usize> = tokenize(&qa.answer, vocab).into_iter().map(|(id, _)| id).collect();
    answer.truncate(config.max_len.saturating_sub(1));
    let mut decoder_input = vec![BOS];
    decoder_input.extend(&answer);
    let mut targets = answer;
    targets.push(EOS);
    let labels = pseudo_saliency_labels(&seq, qa);
    Ok(Example {
        seq,
        decoder_input,
        targets,
        labels,
        answer: qa.answer.clone(),
    })
}

/// Every (document, question) pair of the corpus, in order.
pub fn prepare_examples(
    docs: &[DocumentRecord],
    vocab: &Vocabulary,
    config: &ModelConfig,
) -> Result<Vec<Example>, InputError> {
    examples(docs)
        .map(|(doc, qa)| prepare_example(doc, qa, vocab, config))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Losses {
    pub nll: f64,
    pub sal: f64,
    pub multi: f64,
}

/// Forward and backward for one example; gradients of its multitask loss
/// are added to `grads`.
pub fn example_gradients(
    ex: &Example,
    params: &ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
    rng: Option<&mut ChaCha8Rng>,
    grads: &mut ModelParams,
) -> Result<Losses, TrainError> {
    let fwd = forward_example(&ex.seq, &ex.decoder_input, params, model, rng)?;
    let (nll, d_logits) = nll_loss_grad(&fwd.logits, &ex.targets)?;
    let (sal, mut d_sal) = saliency_loss_grad(&fwd.saliency, &ex.labels, config.label_smooth_pos);
    for d in &mut d_sal {
        *d *= config.gamma_sal;
    }
    backward_example(&fwd, &d_logits, &d_sal, params, grads);
    Ok(Losses {
        nll,
        sal,
        multi: multitask_loss(nll, sal, config.gamma_sal),
    })
}

fn example_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(epoch as u64).to_le_bytes());
    key[16..24].copy_from_slice(&(index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Mean losses and summed-then-averaged gradients over a batch. Examples
/// run in parallel; results are reduced in batch order so the outcome does
/// not depend on the thread count.
fn accumulate(
    batch: &[(usize, &Example)],
    params: &ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
    epoch: Option<usize>,
) -> Result<(Losses, ModelParams), TrainError> {
    let results: Vec<Result<(Losses, ModelParams), TrainError>> = batch
        .par_iter()
        .map(|(index, ex)| {
            let mut grads = params.zeros_like();
            let mut rng = epoch.map(|e| example_rng(config.seed, e, *index));
            let l = example_gradients(ex, params, model, config, rng.as_mut(), &mut grads)?;
            Ok((l, grads))
        })
        .collect();
    let mut total = params.zeros_like();
    let mut losses = Losses::default();
    for r in results {
        let (l, g) = r?;
        total.add_assign(&g);
        losses.nll += l.nll;
        losses.sal += l.sal;
        losses.multi += l.multi;
    }
    let n = batch.len() as f64;
    total.scale(1.0 / n);
    losses.nll /= n;
    losses.sal /= n;
    losses.multi /= n;
    Ok((losses, total))
}

/// Mean multitask loss and its gradient over `batch`, without dropout.
pub fn batch_gradients(
    batch: &[Example],
    params: &ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Losses, ModelParams), TrainError> {
    let indexed: Vec<(usize, &Example)> = batch.iter().enumerate().collect();
    accumulate(&indexed, params, model, config, None)
}

/// Mean losses over `data` without dropout.
pub fn evaluate_losses(
    data: &[Example],
    params: &ModelParams,
    model: &ModelConfig,
    config: &TrainConfig,
) -> Result<Losses, TrainError> {
    let per: Vec<Result<Losses, TrainError>> = data
        .par_iter()
        .map(|ex| {
            let fwd = forward_example(&ex.seq, &ex.decoder_input, params, model, None)?;
            let nll = nll_loss(&fwd.logits, &ex.targets)?;
            let sal = saliency_loss(&fwd.saliency, &ex.labels, config.label_smooth_pos);
            Ok(Losses {
                nll,
                sal,
                multi: multitask_loss(nll, sal, config.gamma_sal),
            })
        })
        .collect();
    let mut total = Losses::default();
    for l in per {
        let l = l?;
        total.nll += l.nll;
        total.sal += l.sal;
        total.multi += l.multi;
    }
    let n = data.len().max(1) as f64;
    Ok(Losses {
        nll: total.nll / n,
        sal: total.sal / n,
        multi: total.multi / n,
    })
}

/// Mean saliency probability over positive positions minus the mean over
/// negative ones, pooled across `data`. `None` when either set is empty.
pub fn saliency_gap(
    data: &[Example],
    params: &ModelParams,
    model: &ModelConfig,
) -> Result<Option<f64>, TrainError> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for ex in data {
        let fwd = forward_example(&ex.seq, &ex.decoder_input, params, model, None)?;
        for (s, l) in fwd.saliency.scores.iter().zip(&ex.labels.labels) {
            if l.positive {
                pos.push(s.prob);
            } else {
                neg.push(s.prob);
            }
        }
    }
    if pos.is_empty() || neg.is_empty() {
        return Ok(None);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(Some(mean(&pos) - mean(&neg)))
}

/// Greedy answers for `data`, in order.
pub fn predict(
    data: &[Example],
    vocab: &Vocabulary,
    params: &ModelParams,
    model: &ModelConfig,
    mode: DecodeMode,
    max_answer_len: usize,
) -> Result<Vec<String>, TrainError> {
    data.par_iter()
        .map(|ex| {
            let (emb, _) = params.embeddings.fuse_forward(&ex.seq, model.embed_options())?;
            let enc = encode(&emb, params, model);
            let ids = generate_ids(&enc, params, model, mode, max_answer_len)?;
            Ok(vocab.detokenize(&ids))
        })
        .collect()
}

/// Corpus ROUGE-L of greedy answers against the reference answers.
pub fn validation_rouge_l(
    data: &[Example],
    vocab: &Vocabulary,
    params: &ModelParams,
    model: &ModelConfig,
    max_answer_len: usize,
) -> Result<f64, TrainError> {
    let predictions = predict(data, vocab, params, model, DecodeMode::Greedy, max_answer_len)?;
    let pairs: Vec<EvalPair> = predictions
        .into_iter()
        .zip(data)
        .map(|(p, ex)| EvalPair::new(p, ex.answer.clone()))
        .collect();
    Ok(rouge_l(&pairs).expect("non-empty validation set"))
}

/// Training-mode mean losses of one epoch and the validation score.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub nll: f64,
    pub sal: f64,
    pub multi: f64,
    pub dev_rouge_l: Option<f64>,
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch {} nll {:.6} sal {:.6} multi {:.6} dev_rouge_l ",
            self.epoch, self.nll, self.sal, self.multi
        )?;
        match self.dev_rouge_l {
            Some(r) => write!(f, "{r:.4}"),
            None => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the selected epoch.
    pub params: ModelParams,
    pub trace: Vec<EpochRecord>,
    /// 1-based epoch the parameters come from.
    pub best_epoch: usize,
}

/// Adam over shuffled mini-batches. The parameters of the epoch with the
/// highest validation ROUGE-L are returned (the later epoch on ties); with
/// no validation data, the last epoch's.
pub fn train(
    train_set: &[Example],
    dev_set: &[Example],
    vocab: &Vocabulary,
    model: &ModelConfig,
    mut params: ModelParams,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    model.validate().map_err(TrainError::Config)?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let mut adam = Adam::new(&params, config.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, usize, ModelParams)> = None;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = Losses::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<(usize, &Example)> = chunk.iter().map(|&i| (i, &train_set[i])).collect();
            let (losses, grads) = accumulate(&batch, &params, model, config, Some(epoch))?;
            if !losses.multi.is_finite() || !grads.is_finite() {
                return Err(TrainError::Diverged { epoch, batch: b });
            }
            adam.step(&mut params, &grads);
            let n = chunk.len() as f64;
            sums.nll += losses.nll * n;
            sums.sal += losses.sal * n;
            sums.multi += losses.multi * n;
        }
        let n = train_set.len() as f64;
        let validate = !dev_set.is_empty()
            && (epoch % config.eval_every == 0 || epoch == config.max_epochs);
        let dev_rouge_l = if validate {
            Some(validation_rouge_l(dev_set, vocab, &params, model, config.max_answer_len)?)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            nll: sums.nll / n,
            sal: sums.sal / n,
            multi: sums.multi / n,
            dev_rouge_l,
        };
        log::debug!("{record}");
        on_epoch(&record);
        trace.push(record);
        if let Some(score) = dev_rouge_l {
            if best.as_ref().is_none_or(|(s, _, _)| score >= *s) {
                best = Some((score, epoch, params.clone()));
            }
        }
    }
    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, epoch),
        None => (params, config.max_epochs),
    };
    Ok(TrainOutcome {
        params,
        trace,
        best_epoch,
    })
}
