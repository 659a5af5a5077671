use std::collections::HashSet;

use crate::corpus::QaPair;
use crate::serializer::{split_pieces, InputSequence, Origin};

/// Binary relevance target for one OCR position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaliencyLabel {
    /// Index into the input sequence.
    pub position: usize,
    pub roi_index: usize,
    pub token_index: usize,
    pub positive: bool,
}

/// One label per OCR position, in sequence order (the order of
/// `SaliencyScores`).
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SaliencyLabels {
    pub labels: Vec<SaliencyLabel>,
}

impl SaliencyLabels {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|l| l.positive).count()
    }

    /// BCE targets with positives lifted to `positive_value`.
    pub fn targets(&self, positive_value: f64) -> Vec<f64> {
        self.labels
            .iter()
            .map(|l| if l.positive { positive_value } else { 0.0 })
            .collect()
    }

    pub fn at_position(&self, position: usize) -> Option<&SaliencyLabel> {
        self.labels.iter().find(|l| l.position == position)
    }
}

/// An OCR piece is positive when its text occurs among the answer's pieces
/// and its ROI is listed as relevant.
pub fn pseudo_saliency_labels(seq: &InputSequence, qa: &QaPair) -> SaliencyLabels {
    let answer: HashSet<String> = split_pieces(&qa.answer).into_iter().collect();
    let labels = seq
        .positions
        .iter()
        .enumerate()
        .filter(|(_, p)| p.origin == Origin::Ocr)
        .map(|(k, p)| {
            let relevant = p
                .roi_id
                .is_some_and(|id| qa.relevant_roi_ids.contains(&id));
            SaliencyLabel {
                position: k,
                roi_index: p.roi_index.expect("OCR positions carry a ROI index"),
                token_index: p.token_index.expect("OCR positions carry a token index"),
                positive: relevant && answer.contains(&p.piece),
            }
        })
        .collect();
    SaliencyLabels { labels }
}
