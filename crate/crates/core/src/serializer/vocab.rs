use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::{DocumentRecord, RoiClass};

use super::split_pieces;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Sequence start, placed before the question.
pub const START: usize = 2;
/// Separates the question from the document tokens.
pub const SEP: usize = 3;
pub const BOS: usize = 4;
pub const EOS: usize = 5;
const LABEL_BASE: usize = 6;
pub const NUM_RESERVED: usize = LABEL_BASE + 9;

const BASE_NAMES: [&str; 6] = ["[PAD]", "[UNK]", "[S]", "[SEP]", "[BOS]", "[EOS]"];

/// Id of the `[L_class]` marker inserted before each ROI.
pub fn label_id(class: RoiClass) -> usize {
    LABEL_BASE + class.index()
}

pub fn label_name(class: RoiClass) -> String {
    format!("[L_{}]", class.as_str())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn reserved() -> Self {
        let mut tokens: Vec<String> = BASE_NAMES.iter().map(|s| s.to_string()).collect();
        tokens.extend(RoiClass::ALL.iter().map(|c| label_name(*c)));
        Self {
            index: HashMap::new(),
            tokens,
        }
    }

    /// Keeps the most frequent pieces found in questions, answers and OCR
    /// words, up to `max_size` entries in total. Ties go to the
    /// lexicographically smaller piece.
    pub fn build(corpus: &[DocumentRecord], max_size: usize) -> Self {
        assert!(
            max_size > NUM_RESERVED,
            "vocabulary size must exceed the {NUM_RESERVED} reserved tokens"
        );
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut add = |text: &str| {
            for p in split_pieces(text) {
                *counts.entry(p).or_default() += 1;
            }
        };
        for doc in corpus {
            for qa in &doc.qas {
                add(&qa.question);
                add(&qa.answer);
            }
            for roi in &doc.rois {
                for tok in &roi.tokens {
                    add(&tok.form);
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut vocab = Self::reserved();
        for (piece, _) in ranked.into_iter().take(max_size - NUM_RESERVED) {
            vocab.push(piece);
        }
        vocab
    }

    fn push(&mut self, piece: String) {
        self.index.insert(piece.clone(), self.tokens.len());
        self.tokens.push(piece);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of a non-reserved piece, or `[UNK]`.
    pub fn id(&self, piece: &str) -> usize {
        self.index.get(piece).copied().unwrap_or(UNK)
    }

    pub fn get(&self, piece: &str) -> Option<usize> {
        self.index.get(piece).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_reserved(id: usize) -> bool {
        id < NUM_RESERVED
    }

    /// Joins the non-reserved pieces with single spaces.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|id| !Self::is_reserved(**id))
            .filter_map(|id| self.token(*id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self, String> {
        let lines: Vec<&str> = text.lines().collect();
        let mut vocab = Self::reserved();
        if lines.len() < NUM_RESERVED {
            return Err(format!(
                "vocabulary has {} entries, expected at least {NUM_RESERVED}",
                lines.len()
            ));
        }
        for (i, expected) in vocab.tokens.clone().iter().enumerate() {
            if lines[i] != expected {
                return Err(format!("entry {i} is {:?}, expected {expected:?}", lines[i]));
            }
        }
        for piece in &lines[NUM_RESERVED..] {
            if vocab.index.contains_key(*piece) || piece.is_empty() {
                return Err(format!("duplicate or empty piece {piece:?}"));
            }
            vocab.push(piece.to_string());
        }
        Ok(vocab)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        fs::write(path, self.to_text())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_text(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::QaPair;

    fn corpus_of(answers: &[&str]) -> Vec<DocumentRecord> {
        vec![DocumentRecord {
            width: 1,
            height: 1,
            rois: vec![],
            qas: answers
                .iter()
                .map(|a| QaPair {
                    question: "?".into(),
                    answer: a.to_string(),
                    relevant_roi_ids: vec![],
                })
                .collect(),
        }]
    }

    #[test]
    fn empty_corpus_has_only_reserved_tokens() {
        let v = Vocabulary::build(&[], 100);
        assert_eq!(v.len(), NUM_RESERVED);
        assert_eq!(v.token(START), Some("[S]"));
        assert_eq!(v.token(label_id(RoiClass::Paragraph)), Some("[L_paragraph]"));
        assert_eq!(v.token(label_id(RoiClass::Other)), Some("[L_other]"));
    }

    #[test]
    fn frequency_order() {
        let v = Vocabulary::build(&corpus_of(&["a a a b"]), 100);
        // "?" appears once as the question
        assert!(v.id("a") < v.id("b"));
        assert_eq!(v.id("a"), NUM_RESERVED);
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = Vocabulary::build(&corpus_of(&["c b", "b c"]), 100);
        assert!(v.id("b") < v.id("c"));
    }

    #[test]
    fn truncates_to_max_size() {
        let v = Vocabulary::build(&corpus_of(&["a a a b b c"]), NUM_RESERVED + 2);
        assert_eq!(v.len(), NUM_RESERVED + 2);
        assert_eq!(v.id("c"), UNK);
    }

    #[test]
    fn text_round_trip() {
        let v = Vocabulary::build(&corpus_of(&["x y z", "y"]), 100);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
    }
}
