use std::collections::HashMap;

use super::{ngrams, tokenize_pairs, EvalPair, MetricsError};

/// Corpus-level BLEU-n: geometric mean of clipped n-gram precisions up to
/// order `n`, times the brevity penalty. The effective reference length of
/// each pair is its closest reference length (shorter on ties).
pub fn bleu_n(pairs: &[EvalPair], n: usize) -> Result<f64, MetricsError> {
    if !(1..=4).contains(&n) {
        return Err(MetricsError::BadOrder(n));
    }
    Ok(bleu(pairs)?[n - 1])
}

/// BLEU-1 through BLEU-4 in one pass.
pub fn bleu(pairs: &[EvalPair]) -> Result<[f64; 4], MetricsError> {
    let tok = tokenize_pairs(pairs)?;
    let mut correct = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for t in &tok {
        let len = t.prediction.len();
        hyp_len += len;
        ref_len += t
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|l| (l.abs_diff(len), *l))
            .expect("at least one reference");
        for k in 1..=4 {
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &t.references {
                let mut counts: HashMap<&[String], usize> = HashMap::new();
                for g in ngrams(r, k) {
                    *counts.entry(g).or_default() += 1;
                }
                for (g, c) in counts {
                    let slot = max_ref.entry(g).or_default();
                    *slot = (*slot).max(c);
                }
            }
            let mut hyp: HashMap<&[String], usize> = HashMap::new();
            for g in ngrams(&t.prediction, k) {
                *hyp.entry(g).or_default() += 1;
            }
            correct[k - 1] += hyp
                .iter()
                .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            total[k - 1] += len.saturating_sub(k - 1);
        }
    }
    let brevity = if hyp_len == 0 {
        0.0
    } else if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    let mut out = [0.0; 4];
    let mut log_sum = 0.0;
    let mut dead = false;
    for k in 0..4 {
        if correct[k] == 0 {
            dead = true;
        } else {
            log_sum += (correct[k] as f64 / total[k] as f64).ln();
        }
        out[k] = if dead {
            0.0
        } else {
            100.0 * brevity * (log_sum / (k + 1) as f64).exp()
        };
    }
    Ok(out)
}
