//! Document/QA record format, validation and corpus statistics.
//!
//! A corpus file holds one JSON object per line. Each object describes one
//! document image: its dimensions, its regions of interest (ROIs) with their
//! semantic class and OCR words, and the question/answer pairs asked about it.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::serializer::split_pieces;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {field}: {message}")]
    Invalid {
        line: usize,
        field: String,
        message: String,
    },
}

/// Axis-aligned box in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        Self {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    fn check(&self) -> Result<(), String> {
        let all = [self.x_min, self.y_min, self.x_max, self.y_max];
        if all.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(format!("coordinates must be finite and non-negative, got {all:?}"));
        }
        if self.x_min >= self.x_max {
            return Err(format!("x_min {} must be < x_max {}", self.x_min, self.x_max));
        }
        if self.y_min >= self.y_max {
            return Err(format!("y_min {} must be < y_max {}", self.y_min, self.y_max));
        }
        Ok(())
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x_min >= self.x_min
            && other.y_min >= self.y_min
            && other.x_max <= self.x_max
            && other.y_max <= self.y_max
    }
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

/// Semantic class of a region of interest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoiClass {
    /// Heading/Title
    Heading,
    /// Subtitle/Byline
    Subtitle,
    /// Paragraph/Body
    Paragraph,
    Picture,
    Caption,
    List,
    Data,
    #[serde(rename = "subdata")]
    SubData,
    Other,
}

impl RoiClass {
    pub const ALL: [RoiClass; 9] = [
        RoiClass::Heading,
        RoiClass::Subtitle,
        RoiClass::Paragraph,
        RoiClass::Picture,
        RoiClass::Caption,
        RoiClass::List,
        RoiClass::Data,
        RoiClass::SubData,
        RoiClass::Other,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RoiClass::Heading => "heading",
            RoiClass::Subtitle => "subtitle",
            RoiClass::Paragraph => "paragraph",
            RoiClass::Picture => "picture",
            RoiClass::Caption => "caption",
            RoiClass::List => "list",
            RoiClass::Data => "data",
            RoiClass::SubData => "subdata",
            RoiClass::Other => "other",
        }
    }
}

impl fmt::Display for RoiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub form: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub id: i64,
    #[serde(rename = "class")]
    pub class: RoiClass,
    pub bbox: BBox,
    #[serde(default)]
    pub tokens: Vec<OcrToken>,
    #[serde(default)]
    pub appearance: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    #[serde(rename = "relevant_rois", default)]
    pub relevant_roi_ids: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub width: u32,
    pub height: u32,
    pub rois: Vec<Roi>,
    #[serde(default)]
    pub qas: Vec<QaPair>,
}

impl DocumentRecord {
    /// Checks every record invariant. Returns overhang warnings (OCR boxes
    /// sticking out of their ROI) separately, as they are not fatal.
    pub fn validate(&self) -> Result<Vec<String>, (String, String)> {
        let mut warnings = Vec::new();
        if self.width == 0 {
            return Err(("width".into(), "must be positive".into()));
        }
        if self.height == 0 {
            return Err(("height".into(), "must be positive".into()));
        }
        let page = BBox::new(0.0, 0.0, self.width as f64, self.height as f64);
        let mut ids = HashSet::new();
        for (r, roi) in self.rois.iter().enumerate() {
            let field = format!("rois[{r}].bbox");
            roi.bbox.check().map_err(|m| (field.clone(), m))?;
            if !page.contains(&roi.bbox) {
                return Err((field, format!("outside the {}x{} image", self.width, self.height)));
            }
            if !ids.insert(roi.id) {
                return Err((format!("rois[{r}].id"), format!("duplicate ROI id {}", roi.id)));
            }
            if let Some(app) = &roi.appearance {
                if app.iter().any(|v| !v.is_finite()) {
                    return Err((format!("rois[{r}].appearance"), "non-finite value".into()));
                }
            }
            for (t, tok) in roi.tokens.iter().enumerate() {
                if tok.form.is_empty() {
                    return Err((format!("rois[{r}].tokens[{t}].form"), "empty form".into()));
                }
                tok.bbox
                    .check()
                    .map_err(|m| (format!("rois[{r}].tokens[{t}].bbox"), m))?;
                if !roi.bbox.contains(&tok.bbox) {
                    warnings.push(format!("rois[{r}].tokens[{t}].bbox overhangs its ROI"));
                }
            }
        }
        for (q, qa) in self.qas.iter().enumerate() {
            if qa.question.trim().is_empty() {
                return Err((format!("qas[{q}].question"), "empty question".into()));
            }
            if qa.answer.trim().is_empty() {
                return Err((format!("qas[{q}].answer"), "empty answer".into()));
            }
            for id in &qa.relevant_roi_ids {
                if !ids.contains(id) {
                    return Err((
                        format!("qas[{q}].relevant_rois"),
                        format!("unknown ROI id {id}"),
                    ));
                }
            }
        }
        Ok(warnings)
    }

    pub fn num_ocr_words(&self) -> usize {
        self.rois.iter().map(|r| r.tokens.len()).sum()
    }
}

/// Parses a corpus from text, one record per non-blank line.
pub fn parse_corpus(text: &str) -> Result<Vec<DocumentRecord>, CorpusError> {
    let mut docs = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let doc: DocumentRecord = serde_json::from_str(line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        match doc.validate() {
            Ok(warnings) => {
                for w in warnings {
                    log::warn!("line {line_no}: {w}");
                }
            }
            Err((field, message)) => {
                return Err(CorpusError::Invalid {
                    line: line_no,
                    field,
                    message,
                })
            }
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DocumentRecord>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

pub fn serialize_corpus(docs: &[DocumentRecord]) -> String {
    let mut out = String::new();
    for doc in docs {
        out.push_str(&serde_json::to_string(doc).expect("records always serialize"));
        out.push('\n');
    }
    out
}

pub fn save_corpus(path: impl AsRef<Path>, docs: &[DocumentRecord]) -> std::io::Result<()> {
    fs::write(path, serialize_corpus(docs))
}

/// Iterates every (document, QA) pair in corpus order.
pub fn examples(docs: &[DocumentRecord]) -> impl Iterator<Item = (&DocumentRecord, &QaPair)> {
    docs.iter().flat_map(|d| d.qas.iter().map(move |qa| (d, qa)))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CorpusStats {
    pub num_images: usize,
    pub num_questions: usize,
    pub num_unique_questions: usize,
    pub pct_unique_answers: f64,
    pub avg_len_questions: f64,
    pub avg_len_documents: f64,
    pub avg_len_answers: f64,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Num. images              {}", self.num_images)?;
        writeln!(f, "Num. questions           {}", self.num_questions)?;
        writeln!(f, "Num. unique questions    {}", self.num_unique_questions)?;
        writeln!(f, "Perc. unique answers     {:.2}", self.pct_unique_answers)?;
        writeln!(f, "Avg. len. questions      {:.2}", self.avg_len_questions)?;
        writeln!(f, "Avg. len. documents      {:.2}", self.avg_len_documents)?;
        write!(f, "Avg. len. answers        {:.2}", self.avg_len_answers)
    }
}

fn normalize_for_uniqueness(s: &str) -> String {
    s.to_lowercase().split_whitespace().collect::<Vec<_>>().join(" ")
}

fn mean(total: usize, count: usize) -> f64 {
    if count == 0 {
        0.0
    } else {
        total as f64 / count as f64
    }
}

pub fn compute_stats(docs: &[DocumentRecord]) -> CorpusStats {
    let mut questions = HashSet::new();
    let mut answers = HashSet::new();
    let (mut q_len, mut a_len, mut n_qa) = (0usize, 0usize, 0usize);
    for (_, qa) in examples(docs) {
        n_qa += 1;
        q_len += split_pieces(&qa.question).len();
        a_len += split_pieces(&qa.answer).len();
        questions.insert(normalize_for_uniqueness(&qa.question));
        answers.insert(normalize_for_uniqueness(&qa.answer));
    }
    let doc_len: usize = docs.iter().map(DocumentRecord::num_ocr_words).sum();
    CorpusStats {
        num_images: docs.len(),
        num_questions: n_qa,
        num_unique_questions: questions.len(),
        pct_unique_answers: 100.0 * mean(answers.len(), n_qa),
        avg_len_questions: mean(q_len, n_qa),
        avg_len_documents: mean(doc_len, docs.len()),
        avg_len_answers: mean(a_len, n_qa),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE: &str = r#"{"width": 100, "height": 200, "rois": [{"id": 7, "class": "paragraph", "bbox": [10, 20, 90, 60], "tokens": [{"form": "Figure", "bbox": [12, 22, 40, 30]}, {"form": "1.", "bbox": [42, 22, 50, 30]}], "appearance": null}], "qas": [{"question": "who?", "answer": "figure one", "relevant_rois": [7]}]}"#;

    #[test]
    fn empty_file_is_empty_corpus() {
        assert!(parse_corpus("").unwrap().is_empty());
        assert!(parse_corpus("\n\n").unwrap().is_empty());
    }

    #[test]
    fn single_record_fields() {
        let docs = parse_corpus(ONE).unwrap();
        assert_eq!(docs.len(), 1);
        let d = &docs[0];
        assert_eq!((d.width, d.height), (100, 200));
        assert_eq!(d.rois.len(), 1);
        let roi = &d.rois[0];
        assert_eq!(roi.id, 7);
        assert_eq!(roi.class, RoiClass::Paragraph);
        assert_eq!(roi.bbox, BBox::new(10.0, 20.0, 90.0, 60.0));
        assert_eq!(roi.tokens.len(), 2);
        assert_eq!(roi.tokens[0].form, "Figure");
        assert_eq!(roi.tokens[1].bbox, BBox::new(42.0, 22.0, 50.0, 30.0));
        assert!(roi.appearance.is_none());
        assert_eq!(d.qas.len(), 1);
        assert_eq!(d.qas[0].question, "who?");
        assert_eq!(d.qas[0].answer, "figure one");
        assert_eq!(d.qas[0].relevant_roi_ids, vec![7]);
    }

    #[test]
    fn inverted_bbox_is_rejected_with_path() {
        let bad = ONE.replace("[10, 20, 90, 60]", "[95, 20, 90, 60]");
        let err = parse_corpus(&bad).unwrap_err().to_string();
        assert!(err.contains("line 1"), "{err}");
        assert!(err.contains("rois[0].bbox"), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = format!("{ONE}\n{{not json\n");
        match parse_corpus(&text).unwrap_err() {
            CorpusError::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn unknown_class_and_relevant_roi_are_rejected() {
        assert!(parse_corpus(&ONE.replace("\"paragraph\"", "\"table\"")).is_err());
        let err = parse_corpus(&ONE.replace("\"relevant_rois\": [7]", "\"relevant_rois\": [8]"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("relevant_rois"), "{err}");
    }

    #[test]
    fn overhanging_token_is_only_a_warning() {
        let text = ONE.replace("[42, 22, 50, 30]", "[42, 22, 95, 30]");
        let docs = parse_corpus(&text).unwrap();
        assert_eq!(docs[0].validate().unwrap().len(), 1);
    }

    #[test]
    fn class_strings_round_trip() {
        for class in RoiClass::ALL {
            let json = serde_json::to_string(&class).unwrap();
            assert_eq!(json, format!("\"{}\"", class.as_str()));
            assert_eq!(serde_json::from_str::<RoiClass>(&json).unwrap(), class);
        }
    }

    fn doc_with_questions(qs: &[&str]) -> DocumentRecord {
        DocumentRecord {
            width: 10,
            height: 10,
            rois: vec![],
            qas: qs
                .iter()
                .map(|q| QaPair {
                    question: q.to_string(),
                    answer: "x".into(),
                    relevant_roi_ids: vec![],
                })
                .collect(),
        }
    }

    #[test]
    fn stats_of_empty_corpus() {
        assert_eq!(compute_stats(&[]), CorpusStats::default());
    }

    #[test]
    fn stats_average_question_length() {
        let docs = vec![doc_with_questions(&["a b"]), doc_with_questions(&["a b c"])];
        let s = compute_stats(&docs);
        assert_eq!(s.num_images, 2);
        assert_eq!(s.num_questions, 2);
        assert_eq!(s.avg_len_questions, 2.5);
        assert_eq!(s.num_unique_questions, 2);
        assert_eq!(s.pct_unique_answers, 50.0);
    }

    #[test]
    fn uniqueness_ignores_case_and_spacing() {
        let docs = vec![doc_with_questions(&["What  is it", "what is IT", "other"])];
        assert_eq!(compute_stats(&docs).num_unique_questions, 2);
    }
}
