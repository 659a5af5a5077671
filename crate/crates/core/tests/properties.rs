use layoutmrc::corpus::{
    compute_stats, parse_corpus, serialize_corpus, BBox, DocumentRecord, OcrToken, QaPair, Roi,
    RoiClass,
};
use layoutmrc::metrics::{bleu, cider, rouge_l, EvalPair};
use layoutmrc::serializer::{build_input_sequence, split_pieces, Origin, Vocabulary};
use layoutmrc::trainer::pseudo_saliency_labels;
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    prop_oneof![
        "[a-z]{1,7}",
        "[A-Z][a-z]{0,5}",
        "[0-9]{1,4}",
        "[0-9]{1,2}\\.[0-9]%",
        "[a-z]{1,4}[,.?]",
    ]
}

fn roi_strategy() -> impl Strategy<Value = (u32, u32, u32, u32, Vec<String>, Option<Vec<i32>>, usize)> {
    (
        0u32..80,
        0u32..80,
        1u32..20,
        1u32..20,
        prop::collection::vec(word(), 0..5),
        prop::option::of(prop::collection::vec(-8i32..8, 3)),
        0usize..9,
    )
}

prop_compose! {
    fn doc_strategy()(
        scale in 1u32..20,
        rois in prop::collection::vec(roi_strategy(), 0..4),
        questions in prop::collection::vec(
            (prop::collection::vec(word(), 1..6), prop::collection::vec(word(), 1..6), any::<u8>()),
            1..3,
        ),
    ) -> DocumentRecord {
        let size = 100 * scale;
        let s = scale as f64;
        let rois: Vec<Roi> = rois
            .into_iter()
            .enumerate()
            .map(|(r, (x, y, w, h, words, app, class))| {
                let bbox = BBox::new(x as f64 * s, y as f64 * s, (x + w) as f64 * s, (y + h) as f64 * s);
                let n = words.len().max(1) as f64;
                let tokens = words
                    .into_iter()
                    .enumerate()
                    .map(|(k, form)| OcrToken {
                        form,
                        bbox: BBox::new(
                            bbox.x_min + (bbox.x_max - bbox.x_min) * k as f64 / n,
                            bbox.y_min,
                            bbox.x_min + (bbox.x_max - bbox.x_min) * (k + 1) as f64 / n,
                            bbox.y_max,
                        ),
                    })
                    .collect();
                Roi {
                    id: r as i64 * 3 + 1,
                    class: RoiClass::ALL[class],
                    bbox,
                    tokens,
                    appearance: app.map(|v| v.into_iter().map(|x| x as f64 / 8.0).collect()),
                }
            })
            .collect();
        let qas = questions
            .into_iter()
            .map(|(q, a, mask)| QaPair {
                question: q.join(" "),
                answer: a.join(" "),
                relevant_roi_ids: rois
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| mask & (1 << k) != 0)
                    .map(|(_, r)| r.id)
                    .collect(),
            })
            .collect();
        DocumentRecord { width: size, height: size, rois, qas }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn corpus_round_trips(docs in prop::collection::vec(doc_strategy(), 0..4)) {
        for d in &docs {
            prop_assert!(d.validate().is_ok());
        }
        let text = serialize_corpus(&docs);
        prop_assert_eq!(parse_corpus(&text).unwrap(), docs);
    }

    #[test]
    fn stats_ignore_document_order(mut docs in prop::collection::vec(doc_strategy(), 1..5)) {
        let a = compute_stats(&docs);
        docs.reverse();
        let b = compute_stats(&docs);
        prop_assert_eq!(a.num_questions, b.num_questions);
        prop_assert_eq!(a.num_unique_questions, b.num_unique_questions);
        prop_assert!((a.avg_len_answers - b.avg_len_answers).abs() < 1e-12);
        prop_assert!((a.avg_len_documents - b.avg_len_documents).abs() < 1e-12);
        prop_assert!((a.pct_unique_answers - b.pct_unique_answers).abs() < 1e-12);
    }

    #[test]
    fn serializer_layout_invariants(doc in doc_strategy()) {
        let vocab = Vocabulary::build(std::slice::from_ref(&doc), 200);
        let qa = &doc.qas[0];
        let seq = build_input_sequence(&qa.question, &doc, &vocab, 1024).unwrap();
        prop_assert_eq!(&seq, &build_input_sequence(&qa.question, &doc, &vocab, 1024).unwrap());
        let expected_len = 2
            + split_pieces(&qa.question).len()
            + doc.rois.iter().map(|r| 1 + r.tokens.iter().map(|t| split_pieces(&t.form).len()).sum::<usize>()).sum::<usize>();
        prop_assert_eq!(seq.len(), expected_len);
        let labels = seq.positions.iter().filter(|p| p.origin == Origin::RoiLabel).count();
        prop_assert_eq!(labels, doc.rois.len());
        for p in &seq.positions {
            if let Some(loc) = p.loc {
                prop_assert!(loc.iter().all(|v| (0.0..=1.0).contains(v)));
                prop_assert!(loc[0] < loc[2] && loc[1] < loc[3]);
            }
            let layout = matches!(p.origin, Origin::RoiLabel | Origin::Ocr);
            prop_assert_eq!(p.loc.is_some(), layout);
            prop_assert_eq!(p.seg_class.is_some(), layout);
        }
        let short = build_input_sequence(&qa.question, &doc, &vocab, expected_len.min(12).max(split_pieces(&qa.question).len() + 2)).unwrap();
        prop_assert!(short.len() <= expected_len.min(12).max(split_pieces(&qa.question).len() + 2));
        prop_assert_eq!(&seq.positions[..short.len()], &short.positions[..]);
    }

    #[test]
    fn labels_ignore_answer_word_order(doc in doc_strategy(), rotate in 0usize..6) {
        let vocab = Vocabulary::build(std::slice::from_ref(&doc), 200);
        let qa = &doc.qas[0];
        let seq = build_input_sequence(&qa.question, &doc, &vocab, 1024).unwrap();
        let mut words: Vec<&str> = qa.answer.split(' ').collect();
        let k = rotate % words.len();
        words.rotate_left(k);
        words.reverse();
        let shuffled = QaPair { answer: words.join(" "), ..qa.clone() };
        let a = pseudo_saliency_labels(&seq, qa);
        let b = pseudo_saliency_labels(&seq, &shuffled);
        prop_assert_eq!(&a, &b);
        for l in &a.labels {
            prop_assert_eq!(seq.positions[l.position].origin, Origin::Ocr);
            if l.positive {
                let id = seq.positions[l.position].roi_id.unwrap();
                prop_assert!(qa.relevant_roi_ids.contains(&id));
            }
        }
    }

    #[test]
    fn metrics_ignore_case(
        pairs in prop::collection::vec((prop::collection::vec(word(), 0..8), prop::collection::vec(word(), 1..8)), 1..6)
    ) {
        let lower: Vec<EvalPair> = pairs.iter().map(|(p, r)| EvalPair::new(p.join(" "), r.join(" "))).collect();
        let upper: Vec<EvalPair> = lower
            .iter()
            .map(|p| EvalPair::new(p.prediction.to_uppercase(), p.references[0].to_uppercase()))
            .collect();
        prop_assert_eq!(bleu(&lower).unwrap(), bleu(&upper).unwrap());
        prop_assert_eq!(rouge_l(&lower).unwrap(), rouge_l(&upper).unwrap());
        prop_assert_eq!(cider(&lower).unwrap(), cider(&upper).unwrap());
        for b in bleu(&lower).unwrap() {
            prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
        }
    }

    #[test]
    fn cider_ignores_pair_order(
        pairs in prop::collection::vec((prop::collection::vec(word(), 0..8), prop::collection::vec(word(), 1..8)), 1..6)
    ) {
        let mut eval: Vec<EvalPair> = pairs.iter().map(|(p, r)| EvalPair::new(p.join(" "), r.join(" "))).collect();
        let a = cider(&eval).unwrap();
        eval.reverse();
        prop_assert!((a - cider(&eval).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn rouge_of_identical_text_is_full(words in prop::collection::vec("[a-z0-9]{1,6}", 1..10)) {
        let text = words.join(" ");
        prop_assert_eq!(rouge_l(&[EvalPair::new(text.clone(), text)]).unwrap(), 100.0);
    }
}
