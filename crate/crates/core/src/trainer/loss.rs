use crate::model::SaliencyScores;
use crate::serializer::PAD;
use crate::tensor::{log_softmax, sigmoid, softplus, Matrix};

use super::labels::SaliencyLabels;
use super::TrainError;

/// Mean binary cross-entropy between saliency scores and smoothed labels,
/// normalized by the number of OCR positions. Returns the loss and its
/// gradient with respect to each saliency logit.
pub fn saliency_loss_grad(
    scores: &SaliencyScores,
    labels: &SaliencyLabels,
    positive_value: f64,
) -> (f64, Vec<f64>) {
    assert_eq!(
        scores.scores.len(),
        labels.len(),
        "saliency scores and labels cover different positions"
    );
    if labels.is_empty() {
        return (0.0, Vec::new());
    }
    let n = labels.len() as f64;
    let targets = labels.targets(positive_value);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(targets.len());
    for (s, t) in scores.scores.iter().zip(&targets) {
        // -t log σ(u) - (1-t) log(1-σ(u)) = softplus(u) - t u
        loss += softplus(s.logit) - t * s.logit;
        grad.push((sigmoid(s.logit) - t) / n);
    }
    (loss / n, grad)
}

pub fn saliency_loss(scores: &SaliencyScores, labels: &SaliencyLabels, positive_value: f64) -> f64 {
    saliency_loss_grad(scores, labels, positive_value).0
}

/// Mean token cross-entropy over non-padding targets, with the gradient
/// with respect to the logits.
pub fn nll_loss_grad(logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix), TrainError> {
    if logits.rows != targets.len() {
        return Err(TrainError::LengthMismatch {
            logits: logits.rows,
            targets: targets.len(),
        });
    }
    let counted = targets.iter().filter(|t| **t != PAD).count();
    let mut grad = Matrix::zeros(logits.rows, logits.cols);
    if counted == 0 {
        return Ok((0.0, grad));
    }
    let n = counted as f64;
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        if t == PAD {
            continue;
        }
        let logp = log_softmax(logits.row(r));
        loss -= logp[t];
        let g = grad.row_mut(r);
        for (gv, lp) in g.iter_mut().zip(&logp) {
            *gv = lp.exp() / n;
        }
        g[t] -= 1.0 / n;
    }
    Ok((loss / n, grad))
}

pub fn nll_loss(logits: &Matrix, targets: &[usize]) -> Result<f64, TrainError> {
    nll_loss_grad(logits, targets).map(|(l, _)| l)
}

pub fn multitask_loss(l_nll: f64, l_sal: f64, gamma_sal: f64) -> f64 {
    l_nll + gamma_sal * l_sal
}
