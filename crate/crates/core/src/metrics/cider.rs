//! CIDEr-D: TF-IDF weighted n-gram cosine similarity with clipping and a
//! Gaussian length penalty, as computed by the coco-caption scorer.

use std::collections::{BTreeMap, HashMap, HashSet};

use super::{ngrams, tokenize_pairs, EvalPair, MetricsError};

const MAX_N: usize = 4;
const SIGMA: f64 = 6.0;

// ordered maps keep every floating-point sum reproducible
type Counts<'a> = BTreeMap<&'a [String], usize>;

fn count_ngrams(tokens: &[String]) -> [Counts<'_>; MAX_N] {
    std::array::from_fn(|k| {
        let mut c = Counts::new();
        for g in ngrams(tokens, k + 1) {
            *c.entry(g).or_default() += 1;
        }
        c
    })
}

struct Vector<'a> {
    weights: [BTreeMap<&'a [String], f64>; MAX_N],
    norms: [f64; MAX_N],
    /// coco-caption measures length as the bigram count
    length: f64,
}

fn to_vector<'a>(
    counts: &[Counts<'a>; MAX_N],
    df: &HashMap<&[String], f64>,
    log_n: f64,
) -> Vector<'a> {
    let mut weights: [BTreeMap<&[String], f64>; MAX_N] = Default::default();
    let mut norms = [0.0; MAX_N];
    for k in 0..MAX_N {
        for (g, tf) in &counts[k] {
            let d = df.get(g).copied().unwrap_or(0.0).max(1.0).ln();
            let w = *tf as f64 * (log_n - d);
            norms[k] += w * w;
            weights[k].insert(*g, w);
        }
        norms[k] = norms[k].sqrt();
    }
    let length = counts[1].values().sum::<usize>() as f64;
    Vector {
        weights,
        norms,
        length,
    }
}

fn similarity(hyp: &Vector<'_>, reference: &Vector<'_>) -> [f64; MAX_N] {
    let delta = hyp.length - reference.length;
    let penalty = (-(delta * delta) / (2.0 * SIGMA * SIGMA)).exp();
    std::array::from_fn(|k| {
        let mut v: f64 = 0.0;
        for (g, w) in &hyp.weights[k] {
            let r = reference.weights[k].get(*g).copied().unwrap_or(0.0);
            v += w.min(r) * r;
        }
        if hyp.norms[k] != 0.0 && reference.norms[k] != 0.0 {
            v /= hyp.norms[k] * reference.norms[k];
        }
        v * penalty
    })
}

/// Per-pair CIDEr-D, ×100. Document frequencies come from the references of
/// the whole corpus.
pub fn cider_per_pair(pairs: &[EvalPair]) -> Result<Vec<f64>, MetricsError> {
    let tok = tokenize_pairs(pairs)?;
    let ref_counts: Vec<Vec<[Counts<'_>; MAX_N]>> = tok
        .iter()
        .map(|t| t.references.iter().map(|r| count_ngrams(r)).collect())
        .collect();
    let mut df: HashMap<&[String], f64> = HashMap::new();
    for refs in &ref_counts {
        let distinct: HashSet<&[String]> = refs
            .iter()
            .flat_map(|c| c.iter().flat_map(|m| m.keys().copied()))
            .collect();
        for g in distinct {
            *df.entry(g).or_default() += 1.0;
        }
    }
    let log_n = (tok.len() as f64).ln();
    Ok(tok
        .iter()
        .zip(&ref_counts)
        .map(|(t, refs)| {
            let hyp_counts = count_ngrams(&t.prediction);
            let hyp = to_vector(&hyp_counts, &df, log_n);
            let mut total = [0.0; MAX_N];
            for rc in refs {
                let s = similarity(&hyp, &to_vector(rc, &df, log_n));
                for k in 0..MAX_N {
                    total[k] += s[k];
                }
            }
            let mean = total.iter().sum::<f64>() / MAX_N as f64 / refs.len() as f64;
            100.0 * 10.0 * mean
        })
        .collect())
}

/// Corpus CIDEr-D, ×100.
pub fn cider(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    let scores = cider_per_pair(pairs)?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}
