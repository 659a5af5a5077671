use crate::corpus::{BBox, DocumentRecord, OcrToken, QaPair, Roi, RoiClass};
use crate::serializer::{build_input_sequence, InputSequence, Vocabulary};

/// Two ROIs, one with 3-dim appearance features and one without. Fits a
/// model with `max_len >= 12` and a vocabulary of 40.
pub fn sample_doc() -> DocumentRecord {
    let word = |form: &str, x: f64, y: f64| OcrToken {
        form: form.into(),
        bbox: BBox::new(x, y, x + 8.0, y + 4.0),
    };
    DocumentRecord {
        width: 64,
        height: 48,
        rois: vec![
            Roi {
                id: 1,
                class: RoiClass::Heading,
                bbox: BBox::new(2.0, 2.0, 60.0, 10.0),
                tokens: vec![word("Sales", 4.0, 4.0), word("2019", 14.0, 4.0)],
                appearance: Some(vec![0.5, -1.0, 2.0]),
            },
            Roi {
                id: 2,
                class: RoiClass::Data,
                bbox: BBox::new(2.0, 20.0, 60.0, 40.0),
                tokens: vec![word("up", 4.0, 22.0), word("12%", 14.0, 22.0)],
                appearance: None,
            },
        ],
        qas: vec![QaPair {
            question: "sales?".into(),
            answer: "up 12%".into(),
            relevant_roi_ids: vec![2],
        }],
    }
}

pub fn sample_sequence() -> InputSequence {
    let doc = sample_doc();
    let vocab = Vocabulary::build(std::slice::from_ref(&doc), 40);
    build_input_sequence(&doc.qas[0].question, &doc, &vocab, 16).expect("fixture fits")
}
