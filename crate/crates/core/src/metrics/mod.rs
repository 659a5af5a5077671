//! Generative-QA metrics following the coco-caption conventions.
//!
//! Texts are lowercased and split on whitespace and punctuation; punctuation
//! pieces are then dropped, as the coco-caption tokenizer does. All scores
//! are reported on a ×100 scale.

mod bleu;
mod cider;
mod rouge;

use std::fmt;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::serializer::split_pieces;

pub use bleu::{bleu, bleu_n};
pub use cider::{cider, cider_per_pair};
pub use rouge::{rouge_l, rouge_l_pair, rouge_l_with_beta, COCO_BETA};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot score an empty corpus")]
    EmptyCorpus,
    #[error("BLEU order must be between 1 and 4, got {0}")]
    BadOrder(usize),
    #[error("pair {0} has no reference")]
    NoReference(usize),
    #[error("{predictions} predictions but {references} references")]
    CountMismatch { predictions: usize, references: usize },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPair {
    pub prediction: String,
    pub references: Vec<String>,
}

impl EvalPair {
    pub fn new(prediction: impl Into<String>, reference: impl Into<String>) -> Self {
        Self {
            prediction: prediction.into(),
            references: vec![reference.into()],
        }
    }
}

/// Metric tokenization: lowercase word pieces without punctuation.
pub fn metric_tokens(text: &str) -> Vec<String> {
    split_pieces(text)
        .into_iter()
        .filter(|p| p.chars().any(char::is_alphanumeric))
        .collect()
}

pub(crate) struct Tokenized {
    pub prediction: Vec<String>,
    pub references: Vec<Vec<String>>,
}

pub(crate) fn tokenize_pairs(pairs: &[EvalPair]) -> Result<Vec<Tokenized>, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if p.references.is_empty() {
                return Err(MetricsError::NoReference(i));
            }
            Ok(Tokenized {
                prediction: metric_tokens(&p.prediction),
                references: p.references.iter().map(|r| metric_tokens(r)).collect(),
            })
        })
        .collect()
}

pub(crate) fn ngrams(tokens: &[String], n: usize) -> impl Iterator<Item = &[String]> {
    tokens.windows(n)
}

/// Exact match after metric tokenization against any reference, ×100.
pub fn exact_match(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    let tok = tokenize_pairs(pairs)?;
    let hits = tok
        .iter()
        .filter(|t| t.references.contains(&t.prediction))
        .count();
    Ok(100.0 * hits as f64 / tok.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairScores {
    pub rouge_l: f64,
    pub cider: f64,
    pub exact_match: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bleu: [f64; 4],
    pub rouge_l: f64,
    pub cider: f64,
    pub exact_match: f64,
    pub per_example: Vec<PairScores>,
    pub predictions: Vec<String>,
}

impl EvalReport {
    pub fn metric_lines(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("bleu1", self.bleu[0]),
            ("bleu2", self.bleu[1]),
            ("bleu3", self.bleu[2]),
            ("bleu4", self.bleu[3]),
            ("rouge_l", self.rouge_l),
            ("cider", self.cider),
            ("exact_match", self.exact_match),
        ]
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples     {}", self.per_example.len())?;
        writeln!(f, "{:<12} {:>10}", "metric", "score")?;
        for (name, value) in self.metric_lines() {
            writeln!(f, "{name:<12} {value:>10.4}")?;
        }
        writeln!(f, "{:<12} {:>10}", "meteor", "-")?;
        writeln!(f, "{:<12} {:>10}", "bertscore", "-")?;
        for (name, value) in self.metric_lines() {
            writeln!(f, "METRIC {name} {value:.6}")?;
        }
        Ok(())
    }
}

pub fn evaluate_pairs(pairs: &[EvalPair]) -> Result<EvalReport, MetricsError> {
    let tok = tokenize_pairs(pairs)?;
    let mut bleu_scores = [0.0; 4];
    for (n, slot) in bleu_scores.iter_mut().enumerate() {
        *slot = bleu_n(pairs, n + 1)?;
    }
    let cider_pairs = cider_per_pair(pairs)?;
    let per_example: Vec<PairScores> = tok
        .iter()
        .zip(&cider_pairs)
        .map(|(t, c)| PairScores {
            rouge_l: 100.0 * rouge_l_pair(&t.prediction, &t.references, COCO_BETA),
            cider: *c,
            exact_match: t.references.contains(&t.prediction),
        })
        .collect();
    let n = per_example.len() as f64;
    Ok(EvalReport {
        bleu: bleu_scores,
        rouge_l: per_example.iter().map(|p| p.rouge_l).sum::<f64>() / n,
        cider: cider_pairs.iter().sum::<f64>() / n,
        exact_match: 100.0 * per_example.iter().filter(|p| p.exact_match).count() as f64 / n,
        per_example,
        predictions: pairs.iter().map(|p| p.prediction.clone()).collect(),
    })
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>, MetricsError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MetricsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Scores a predictions file against a references file, one answer per line.
pub fn evaluate(
    predictions: impl AsRef<Path>,
    references: impl AsRef<Path>,
) -> Result<EvalReport, MetricsError> {
    evaluate_lines(read_lines(predictions)?, read_lines(references)?)
}

pub fn evaluate_lines(
    predictions: Vec<String>,
    references: Vec<String>,
) -> Result<EvalReport, MetricsError> {
    if predictions.len() != references.len() {
        return Err(MetricsError::CountMismatch {
            predictions: predictions.len(),
            references: references.len(),
        });
    }
    let pairs: Vec<EvalPair> = predictions
        .into_iter()
        .zip(references)
        .map(|(p, r)| EvalPair::new(p, r))
        .collect();
    evaluate_pairs(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_drop_punctuation() {
        assert_eq!(metric_tokens("The cat, sat."), ["the", "cat", "sat"]);
        assert_eq!(metric_tokens("77.3%"), ["77", "3"]);
        assert!(metric_tokens("").is_empty());
    }

    #[test]
    fn identity_corpus_scores_full_marks() {
        let lines: Vec<String> = vec![
            "the roman catholic share is 77.3 percent".into(),
            "it was founded in the year 1998 by two students".into(),
            "a bar chart of annual revenue by region".into(),
        ];
        let r = evaluate_lines(lines.clone(), lines).unwrap();
        assert_eq!(r.bleu, [100.0; 4]);
        assert_eq!(r.rouge_l, 100.0);
        assert_eq!(r.exact_match, 100.0);
        assert!(r.cider > 0.0);
    }

    #[test]
    fn empty_predictions_score_zero() {
        let r = evaluate_lines(
            vec!["".into(), "a b c d e".into()],
            vec!["x y z w".into(), "a b c d e".into()],
        )
        .unwrap();
        assert_eq!(r.per_example[0].rouge_l, 0.0);
        assert_eq!(r.per_example[0].cider, 0.0);
        assert!(!r.per_example[0].exact_match);
    }

    #[test]
    fn count_mismatch_names_both_counts() {
        let e = evaluate_lines(vec!["a".into()], vec!["a".into(), "b".into()]).unwrap_err();
        assert_eq!(e.to_string(), "1 predictions but 2 references");
    }

    #[test]
    fn report_has_machine_readable_lines() {
        let lines = vec!["a b c d".to_string(), "e f g h".to_string()];
        let text = evaluate_lines(lines.clone(), lines).unwrap().to_string();
        assert!(text.contains("METRIC bleu4 100.000000"));
        assert!(text.contains("METRIC rouge_l 100.000000"));
        assert_eq!(text.lines().filter(|l| l.starts_with("METRIC ")).count(), 7);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(evaluate_pairs(&[]), Err(MetricsError::EmptyCorpus)));
        assert!(matches!(bleu_n(&[], 1), Err(MetricsError::EmptyCorpus)));
        assert!(matches!(rouge_l(&[]), Err(MetricsError::EmptyCorpus)));
        assert!(matches!(cider(&[]), Err(MetricsError::EmptyCorpus)));
    }
}
