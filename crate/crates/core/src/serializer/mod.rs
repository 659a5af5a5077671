//! Turns a question and a document record into the encoder input sequence.
//!
//! The sequence is `[S] q_1 .. q_m [SEP]` followed, for every ROI in reading
//! order, by the ROI's class marker `[L_class]` and its OCR pieces. Each
//! position carries the metadata the embedder needs: segment class, the
//! normalized bounding box and a handle to the appearance features.

mod vocab;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::corpus::{BBox, DocumentRecord, Roi, RoiClass};

pub use vocab::{label_id, label_name, Vocabulary, BOS, EOS, NUM_RESERVED, PAD, SEP, START, UNK};

/// Default maximum encoder length.
pub const DEFAULT_MAX_LEN: usize = 512;

#[derive(Debug, Error, PartialEq)]
pub enum SerializeError {
    #[error("question needs {needed} positions but the maximum sequence length is {max_len}")]
    QuestionTooLong { needed: usize, max_len: usize },
    #[error("image size must be positive, got {width}x{height}")]
    BadImageSize { width: f64, height: f64 },
}

/// Lowercases and splits on whitespace; runs of alphanumeric characters form
/// one piece and every other character is a piece of its own.
pub fn split_pieces(text: &str) -> Vec<String> {
    let mut pieces = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
            continue;
        }
        if !current.is_empty() {
            pieces.push(std::mem::take(&mut current));
        }
        if !ch.is_whitespace() {
            pieces.push(ch.to_lowercase().collect());
        }
    }
    if !current.is_empty() {
        pieces.push(current);
    }
    pieces
}

/// Pieces with their vocabulary ids; unknown pieces keep their text.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<(usize, String)> {
    split_pieces(text)
        .into_iter()
        .map(|p| (vocab.id(&p), p))
        .collect()
}

/// Canonical single-space form of a text under the tokenizer, used for exact
/// answer comparison.
pub fn normalize_text(text: &str) -> String {
    split_pieces(text).join(" ")
}

/// Reading order: top to bottom, then left to right. Stable for ties.
pub fn order_rois(rois: &[Roi]) -> Vec<&Roi> {
    let mut ordered: Vec<&Roi> = rois.iter().collect();
    ordered.sort_by(|a, b| {
        a.bbox
            .y_min
            .total_cmp(&b.bbox.y_min)
            .then(a.bbox.x_min.total_cmp(&b.bbox.x_min))
    });
    ordered
}

pub fn normalize_bbox(b: &BBox, width: f64, height: f64) -> Result<[f64; 4], SerializeError> {
    if !(width > 0.0 && height > 0.0) {
        return Err(SerializeError::BadImageSize { width, height });
    }
    Ok([
        b.x_min / width,
        b.y_min / height,
        b.x_max / width,
        b.y_max / height,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Special,
    Question,
    RoiLabel,
    Ocr,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Origin::Special => "special",
            Origin::Question => "question",
            Origin::RoiLabel => "roi_label",
            Origin::Ocr => "ocr",
        })
    }
}

/// Visual features attached to a position. ROIs without features in the
/// record embed as a zero vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Appearance {
    Missing,
    Features(Arc<[f64]>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputPosition {
    pub token_id: usize,
    pub piece: String,
    pub origin: Origin,
    pub seg_class: Option<RoiClass>,
    pub loc: Option<[f64; 4]>,
    pub appearance: Option<Appearance>,
    /// Index of the ROI in the record's `rois` list.
    pub roi_index: Option<usize>,
    /// The ROI's `id` field.
    pub roi_id: Option<i64>,
    /// Index of the OCR word within its ROI.
    pub token_index: Option<usize>,
}

impl InputPosition {
    fn text(token_id: usize, piece: String, origin: Origin) -> Self {
        Self {
            token_id,
            piece,
            origin,
            seg_class: None,
            loc: None,
            appearance: None,
            roi_index: None,
            roi_id: None,
            token_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct InputSequence {
    pub positions: Vec<InputPosition>,
}

impl InputSequence {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn token_ids(&self) -> Vec<usize> {
        self.positions.iter().map(|p| p.token_id).collect()
    }

    /// Sequence indices of OCR positions.
    pub fn ocr_positions(&self) -> impl Iterator<Item = usize> + '_ {
        self.positions
            .iter()
            .enumerate()
            .filter(|(_, p)| p.origin == Origin::Ocr)
            .map(|(k, _)| k)
    }
}

pub fn build_input_sequence(
    question: &str,
    doc: &DocumentRecord,
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<InputSequence, SerializeError> {
    let q = tokenize(question, vocab);
    let needed = q.len() + 2;
    if needed > max_len {
        return Err(SerializeError::QuestionTooLong { needed, max_len });
    }
    let (w, h) = (doc.width as f64, doc.height as f64);

    let mut positions = Vec::with_capacity(max_len.min(needed + doc.num_ocr_words() * 2));
    positions.push(InputPosition::text(START, "[S]".into(), Origin::Special));
    positions.extend(
        q.into_iter()
            .map(|(id, piece)| InputPosition::text(id, piece, Origin::Question)),
    );
    positions.push(InputPosition::text(SEP, "[SEP]".into(), Origin::Special));

    let index_of = |roi: &Roi| {
        doc.rois
            .iter()
            .position(|r| std::ptr::eq(r, roi))
            .expect("ROI comes from this document")
    };

    'rois: for roi in order_rois(&doc.rois) {
        if positions.len() >= max_len {
            break;
        }
        let roi_index = index_of(roi);
        let appearance = match &roi.appearance {
            Some(v) => Appearance::Features(Arc::from(v.as_slice())),
            None => Appearance::Missing,
        };
        positions.push(InputPosition {
            token_id: label_id(roi.class),
            piece: label_name(roi.class),
            origin: Origin::RoiLabel,
            seg_class: Some(roi.class),
            loc: Some(normalize_bbox(&roi.bbox, w, h)?),
            appearance: Some(appearance.clone()),
            roi_index: Some(roi_index),
            roi_id: Some(roi.id),
            token_index: None,
        });
        for (j, word) in roi.tokens.iter().enumerate() {
            // sub-word pieces share their word's box
            let loc = normalize_bbox(&word.bbox, w, h)?;
            for (id, piece) in tokenize(&word.form, vocab) {
                if positions.len() >= max_len {
                    break 'rois;
                }
                positions.push(InputPosition {
                    token_id: id,
                    piece,
                    origin: Origin::Ocr,
                    seg_class: Some(roi.class),
                    loc: Some(loc),
                    appearance: Some(appearance.clone()),
                    roi_index: Some(roi_index),
                    roi_id: Some(roi.id),
                    token_index: Some(j),
                });
            }
        }
    }
    Ok(InputSequence { positions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{OcrToken, QaPair};

    fn roi(id: i64, class: RoiClass, bbox: [f64; 4], words: &[&str]) -> Roi {
        Roi {
            id,
            class,
            bbox: bbox.into(),
            tokens: words
                .iter()
                .enumerate()
                .map(|(k, w)| OcrToken {
                    form: w.to_string(),
                    bbox: [
                        bbox[0] + k as f64,
                        bbox[1],
                        bbox[0] + k as f64 + 1.0,
                        bbox[1] + 1.0,
                    ]
                    .into(),
                })
                .collect(),
            appearance: None,
        }
    }

    fn doc(rois: Vec<Roi>) -> DocumentRecord {
        DocumentRecord {
            width: 100,
            height: 200,
            rois,
            qas: vec![QaPair {
                question: "who?".into(),
                answer: "figure 1".into(),
                relevant_roi_ids: vec![],
            }],
        }
    }

    #[test]
    fn splitting_rules() {
        assert!(split_pieces("").is_empty());
        assert_eq!(split_pieces("Figure 1."), ["figure", "1", "."]);
        assert_eq!(split_pieces("  77.3%  "), ["77", ".", "3", "%"]);
    }

    #[test]
    fn tokenize_marks_unknown_pieces() {
        let d = doc(vec![roi(1, RoiClass::Paragraph, [0., 0., 50., 50.], &["Figure", "1."])]);
        let vocab = Vocabulary::build(&[d], 100);
        assert!(tokenize("", &vocab).is_empty());
        let t = tokenize("Figure 1.", &vocab);
        let pieces: Vec<&str> = t.iter().map(|(_, p)| p.as_str()).collect();
        assert_eq!(pieces, ["figure", "1", "."]);
        assert!(t.iter().all(|(id, _)| *id != UNK));
        assert_eq!(tokenize("zyxw", &vocab), vec![(UNK, "zyxw".to_string())]);
    }

    #[test]
    fn roi_ordering() {
        let a = roi(1, RoiClass::Paragraph, [0., 50., 10., 60.], &[]);
        let b = roi(2, RoiClass::Heading, [0., 10., 10., 20.], &[]);
        let c = roi(3, RoiClass::Caption, [5., 10., 10., 20.], &[]);
        assert_eq!(order_rois(std::slice::from_ref(&a))[0].id, 1);
        let ids: Vec<i64> = order_rois(&[a.clone(), b.clone()]).iter().map(|r| r.id).collect();
        assert_eq!(ids, [2, 1]);
        let ids: Vec<i64> = order_rois(&[c, a, b]).iter().map(|r| r.id).collect();
        assert_eq!(ids, [2, 3, 1]);
    }

    #[test]
    fn bbox_normalization() {
        assert_eq!(
            normalize_bbox(&BBox::new(0., 0., 640., 480.), 640., 480.).unwrap(),
            [0., 0., 1., 1.]
        );
        let v = normalize_bbox(&BBox::new(10., 20., 30., 40.), 100., 200.).unwrap();
        let expected = [0.1, 0.1, 0.3, 0.2];
        for (a, b) in v.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(normalize_bbox(&BBox::new(0., 0., 1., 1.), 0., 10.).is_err());
    }

    #[test]
    fn assembles_question_then_labelled_roi() {
        let d = doc(vec![roi(1, RoiClass::Paragraph, [10., 20., 60., 40.], &["Figure", "1"])]);
        let vocab = Vocabulary::build(std::slice::from_ref(&d), 100);
        let seq = build_input_sequence("who?", &d, &vocab, 64).unwrap();
        let ids = seq.token_ids();
        let expected = vec![
            START,
            vocab.id("who"),
            vocab.id("?"),
            SEP,
            label_id(RoiClass::Paragraph),
            vocab.id("figure"),
            vocab.id("1"),
        ];
        assert_eq!(ids, expected);
        for (k, p) in seq.positions.iter().enumerate() {
            let layout = k >= 4;
            assert_eq!(p.seg_class.is_some(), layout, "position {k}");
            assert_eq!(p.loc.is_some(), layout, "position {k}");
            assert_eq!(p.appearance.is_some(), layout, "position {k}");
        }
        assert_eq!(seq.positions[4].loc.unwrap(), [0.1, 0.1, 0.6, 0.2]);
        assert_eq!(seq.positions[6].token_index, Some(1));
        assert_eq!(seq.positions[6].roi_index, Some(0));
    }

    #[test]
    fn zero_rois_gives_question_only() {
        let d = doc(vec![]);
        let vocab = Vocabulary::build(std::slice::from_ref(&d), 100);
        let seq = build_input_sequence("who?", &d, &vocab, 64).unwrap();
        assert_eq!(seq.token_ids(), vec![START, vocab.id("who"), vocab.id("?"), SEP]);
    }

    #[test]
    fn pieces_inherit_word_box() {
        let d = doc(vec![roi(1, RoiClass::List, [0., 0., 50., 50.], &["77.3%"])]);
        let vocab = Vocabulary::build(std::slice::from_ref(&d), 100);
        let seq = build_input_sequence("q", &d, &vocab, 64).unwrap();
        let ocr: Vec<&InputPosition> =
            seq.positions.iter().filter(|p| p.origin == Origin::Ocr).collect();
        assert_eq!(ocr.len(), 4);
        assert!(ocr.iter().all(|p| p.loc == ocr[0].loc && p.token_index == Some(0)));
    }

    #[test]
    fn truncation_drops_trailing_roi() {
        let d = doc(vec![
            roi(1, RoiClass::Heading, [0., 0., 50., 10.], &["a", "b"]),
            roi(2, RoiClass::Paragraph, [0., 20., 50., 30.], &["c", "d"]),
        ]);
        let vocab = Vocabulary::build(std::slice::from_ref(&d), 100);
        // [S] q [SEP] [L] a b = 6
        let seq = build_input_sequence("q", &d, &vocab, 6).unwrap();
        assert_eq!(seq.len(), 6);
        let labels = seq.positions.iter().filter(|p| p.origin == Origin::RoiLabel).count();
        assert_eq!(labels, 1);
        // room for the second label alone
        let seq = build_input_sequence("q", &d, &vocab, 7).unwrap();
        assert_eq!(seq.positions.last().unwrap().origin, Origin::RoiLabel);
    }

    #[test]
    fn question_longer_than_limit_is_an_error() {
        let d = doc(vec![]);
        let vocab = Vocabulary::build(std::slice::from_ref(&d), 100);
        assert_eq!(
            build_input_sequence("a b c", &d, &vocab, 4),
            Err(SerializeError::QuestionTooLong { needed: 5, max_len: 4 })
        );
    }
}
