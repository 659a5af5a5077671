//! Seeded synthetic documents for smoke runs and tests.
//!
//! Every document has three stacked ROIs of distinct words. Its question
//! names one word and ROI class; the answer is the words that follow it in
//! that ROI, which is the only relevant ROI.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{BBox, DocumentRecord, OcrToken, QaPair, Roi, RoiClass};
use crate::embedder::DEFAULT_APPEARANCE_DIM;

pub const APPEARANCE_DIM: usize = DEFAULT_APPEARANCE_DIM;

const WORDS: [&str; 48] = [
    "amber", "basin", "cedar", "delta", "ember", "fjord", "grove", "harbor", "island", "jasper",
    "kelp", "lagoon", "meadow", "nectar", "orchid", "prairie", "quartz", "ridge", "summit",
    "tundra", "umber", "valley", "willow", "yarrow", "zephyr", "canyon", "dune", "estuary",
    "forest", "glacier", "heath", "inlet", "jungle", "knoll", "lake", "marsh", "oasis", "pond",
    "reef", "savanna", "thicket", "upland", "volcano", "wetland", "2019", "42.5%", "1,200",
    "3.14",
];

const WIDTH: u32 = 600;
const HEIGHT: u32 = 800;

fn make_roi(id: i64, class: RoiClass, top: f64, words: &[&str], appearance: Option<Vec<f64>>) -> Roi {
    let left = 40.0;
    let word_w = 60.0;
    let tokens = words
        .iter()
        .enumerate()
        .map(|(k, w)| OcrToken {
            form: w.to_string(),
            bbox: BBox::new(
                left + k as f64 * (word_w + 6.0),
                top + 10.0,
                left + k as f64 * (word_w + 6.0) + word_w,
                top + 40.0,
            ),
        })
        .collect();
    Roi {
        id,
        class,
        bbox: BBox::new(left - 5.0, top, WIDTH as f64 - 20.0, top + 150.0),
        tokens,
        appearance,
    }
}

/// `num_docs` documents with one question each. Identical arguments give
/// identical corpora.
pub fn corpus(num_docs: usize, seed: u64) -> Vec<DocumentRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_docs).map(|d| document(d, &mut rng)).collect()
}

fn document(d: usize, rng: &mut ChaCha8Rng) -> DocumentRecord {
    let mut pool: Vec<&str> = WORDS.to_vec();
    pool.shuffle(rng);
    let mut classes = RoiClass::ALL.to_vec();
    classes.shuffle(rng);
    let mut cursor = 0;
    let rois: Vec<Roi> = (0..3)
        .map(|k| {
            let n = rng.random_range(5..=7);
            let words = &pool[cursor..cursor + n];
            cursor += n;
            // the last ROI has no visual features
            let appearance = (k < 2)
                .then(|| (0..APPEARANCE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect());
            let id = (d * 10 + k) as i64 + 100;
            make_roi(id, classes[k], 40.0 + 240.0 * k as f64, words, appearance)
        })
        .collect();

    let target = rois.choose(rng).expect("three ROIs");
    let n = target.tokens.len();
    let start = rng.random_range(0..n - 3);
    let len = rng.random_range(2..=3);
    let key = &target.tokens[start].form;
    let answer: Vec<&str> = target.tokens[start + 1..start + 1 + len]
        .iter()
        .map(|t| t.form.as_str())
        .collect();
    DocumentRecord {
        width: WIDTH,
        height: HEIGHT,
        qas: vec![QaPair {
            question: format!("what follows {key} in the {}?", target.class),
            answer: answer.join(" "),
            relevant_roi_ids: vec![target.id],
        }],
        rois,
    }
}
