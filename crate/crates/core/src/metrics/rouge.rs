use super::{tokenize_pairs, EvalPair, MetricsError};

/// F-measure weight used by coco-caption (recall weighted by β² = 1.44).
pub const COCO_BETA: f64 = 1.2;

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence ROUGE-L in [0, 1]: best precision and best recall over the
/// references combined as `(1+β²)PR / (R + β²P)`.
pub fn rouge_l_pair(prediction: &[String], references: &[Vec<String>], beta: f64) -> f64 {
    if prediction.is_empty() {
        return 0.0;
    }
    let mut best_p: f64 = 0.0;
    let mut best_r: f64 = 0.0;
    for r in references.iter().filter(|r| !r.is_empty()) {
        let l = lcs(r, prediction) as f64;
        best_p = best_p.max(l / prediction.len() as f64);
        best_r = best_r.max(l / r.len() as f64);
    }
    if best_p == 0.0 || best_r == 0.0 {
        return 0.0;
    }
    let b2 = beta * beta;
    (1.0 + b2) * best_p * best_r / (best_r + b2 * best_p)
}

/// Mean sentence ROUGE-L over the corpus, ×100.
pub fn rouge_l(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    rouge_l_with_beta(pairs, COCO_BETA)
}

pub fn rouge_l_with_beta(pairs: &[EvalPair], beta: f64) -> Result<f64, MetricsError> {
    let tok = tokenize_pairs(pairs)?;
    let sum: f64 = tok
        .iter()
        .map(|t| rouge_l_pair(&t.prediction, &t.references, beta))
        .sum();
    Ok(100.0 * sum / tok.len() as f64)
}
