use super::*;
use crate::corpus::Document;
use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn pred(items: &[(usize, Polarity)]) -> PredictionSet {
    PredictionSet {
        items: items.iter().map(|&(a, p)| (a, (p, 1.0))).collect(),
    }
}

fn gold(items: &[(usize, Polarity)]) -> BTreeMap<usize, Polarity> {
    items.iter().copied().collect()
}

// ── micro F1 ──────────────────────────────────────────────────────────────

#[test]
fn perfect_predictions_score_one() {
    let mut predictions = BTreeMap::new();
    let mut golds = BTreeMap::new();
    for i in 0..4 {
        let labels = [(i, Polarity::Positive), (i + 4, Polarity::Negative)];
        predictions.insert(format!("d{i}"), pred(&labels));
        golds.insert(format!("d{i}"), gold(&labels));
    }
    for task in [TaskMode::AspectSentiment, TaskMode::AspectOnly] {
        let r = micro_f1(&predictions, &golds, task).unwrap();
        assert_eq!((r.precision, r.recall, r.f1), (1.0, 1.0, 1.0));
        assert_eq!(r.fp + r.fn_, 0);
    }
}

#[test]
fn half_overlap_scores_half() {
    // gold {(A,pos),(B,neg)}, pred {(A,pos),(C,neu)} → TP=1, FP=1, FN=1.
    let mut predictions = BTreeMap::new();
    let mut golds = BTreeMap::new();
    predictions.insert(
        "d".to_string(),
        pred(&[(0, Polarity::Positive), (2, Polarity::Neutral)]),
    );
    golds.insert(
        "d".to_string(),
        gold(&[(0, Polarity::Positive), (1, Polarity::Negative)]),
    );
    let r = micro_f1(&predictions, &golds, TaskMode::AspectSentiment).unwrap();
    assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 1));
    assert_abs_diff_eq!(r.f1, 0.5, epsilon = 1e-12);
}

#[test]
fn aspect_only_counts_wrong_polarity_as_hit() {
    let mut predictions = BTreeMap::new();
    let mut golds = BTreeMap::new();
    predictions.insert("d".to_string(), pred(&[(0, Polarity::Negative)]));
    golds.insert("d".to_string(), gold(&[(0, Polarity::Positive)]));
    let sentiment = micro_f1(&predictions, &golds, TaskMode::AspectSentiment).unwrap();
    assert_eq!(sentiment.tp, 0);
    let aspect_only = micro_f1(&predictions, &golds, TaskMode::AspectOnly).unwrap();
    assert_eq!((aspect_only.tp, aspect_only.fp, aspect_only.fn_), (1, 0, 0));
    assert_eq!(aspect_only.f1, 1.0);
}

#[test]
fn empty_predictions_on_nonempty_gold_score_zero_by_convention() {
    let mut predictions = BTreeMap::new();
    let mut golds = BTreeMap::new();
    predictions.insert("d".to_string(), PredictionSet::default());
    golds.insert("d".to_string(), gold(&[(0, Polarity::Positive)]));
    let r = micro_f1(&predictions, &golds, TaskMode::AspectSentiment).unwrap();
    assert_eq!((r.precision, r.recall, r.f1), (0.0, 0.0, 0.0));
}

#[test]
fn id_mismatch_lists_missing_ids() {
    let mut predictions = BTreeMap::new();
    let mut golds = BTreeMap::new();
    predictions.insert("only-pred".to_string(), PredictionSet::default());
    golds.insert("only-gold".to_string(), gold(&[]));
    match micro_f1(&predictions, &golds, TaskMode::AspectOnly).unwrap_err() {
        EvalError::IdMismatch {
            missing_in_pred,
            missing_in_gold,
        } => {
            assert_eq!(missing_in_pred, vec!["only-gold"]);
            assert_eq!(missing_in_gold, vec!["only-pred"]);
        }
        other => panic!("unexpected {other}"),
    }
}

/// Independent brute-force oracle: per-item membership loops, no set types.
fn brute_force_counts(
    predictions: &BTreeMap<String, PredictionSet>,
    golds: &BTreeMap<String, BTreeMap<usize, Polarity>>,
    task: TaskMode,
) -> (usize, usize, usize) {
    let to_items = |id: &str, pairs: Vec<(usize, Polarity)>| -> Vec<(String, usize, String)> {
        pairs
            .into_iter()
            .map(|(a, p)| {
                let pol = match task {
                    TaskMode::AspectSentiment => p.as_str().to_string(),
                    TaskMode::AspectOnly => String::new(),
                };
                (id.to_string(), a, pol)
            })
            .collect()
    };
    let mut pred_items = Vec::new();
    for (id, set) in predictions {
        pred_items.extend(to_items(
            id,
            set.items.iter().map(|(&a, &(p, _))| (a, p)).collect(),
        ));
    }
    pred_items.sort();
    pred_items.dedup();
    let mut gold_items = Vec::new();
    for (id, labels) in golds {
        gold_items.extend(to_items(id, labels.iter().map(|(&a, &p)| (a, p)).collect()));
    }
    gold_items.sort();
    gold_items.dedup();
    let tp = pred_items.iter().filter(|i| gold_items.contains(i)).count();
    (tp, pred_items.len() - tp, gold_items.len() - tp)
}

fn random_instance(
    rng: &mut ChaCha8Rng,
) -> (
    BTreeMap<String, PredictionSet>,
    BTreeMap<String, BTreeMap<usize, Polarity>>,
) {
    let docs = rng.gen_range(1..=5);
    let aspects = rng.gen_range(1..=4usize);
    let mut predictions = BTreeMap::new();
    let mut golds = BTreeMap::new();
    for d in 0..docs {
        let id = format!("d{d}");
        let mut p = PredictionSet::default();
        let mut g = BTreeMap::new();
        for a in 0..aspects {
            if rng.gen_bool(0.5) {
                p.items
                    .insert(a, (Polarity::ALL[rng.gen_range(0..3)], 1.0));
            }
            if rng.gen_bool(0.5) {
                g.insert(a, Polarity::ALL[rng.gen_range(0..3)]);
            }
        }
        predictions.insert(id.clone(), p);
        golds.insert(id, g);
    }
    (predictions, golds)
}

#[test]
fn micro_f1_matches_brute_force_oracle_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(123);
    for _ in 0..500 {
        let (predictions, golds) = random_instance(&mut rng);
        for task in [TaskMode::AspectSentiment, TaskMode::AspectOnly] {
            let report = micro_f1(&predictions, &golds, task).unwrap();
            let (tp, fp, fn_) = brute_force_counts(&predictions, &golds, task);
            assert_eq!((report.tp, report.fp, report.fn_), (tp, fp, fn_));
        }
        // Pair matching is implied by triple matching.
        let triple = micro_f1(&predictions, &golds, TaskMode::AspectSentiment).unwrap();
        let pair = micro_f1(&predictions, &golds, TaskMode::AspectOnly).unwrap();
        assert!(pair.f1 >= triple.f1 - 1e-12);
    }
}

#[test]
fn micro_f1_is_permutation_invariant_over_documents() {
    let mut rng = ChaCha8Rng::seed_from_u64(321);
    let (predictions, golds) = random_instance(&mut rng);
    // BTreeMap iteration is id-ordered already; renaming ids permutes the
    // document order seen by the evaluator.
    let rename = |s: &str| format!("zz-{}", s.chars().rev().collect::<String>());
    let predictions2: BTreeMap<String, PredictionSet> = predictions
        .iter()
        .map(|(k, v)| (rename(k), v.clone()))
        .collect();
    let golds2: BTreeMap<String, BTreeMap<usize, Polarity>> =
        golds.iter().map(|(k, v)| (rename(k), v.clone())).collect();
    let a = micro_f1(&predictions, &golds, TaskMode::AspectSentiment).unwrap();
    let b = micro_f1(&predictions2, &golds2, TaskMode::AspectSentiment).unwrap();
    assert_eq!((a.tp, a.fp, a.fn_, a.f1), (b.tp, b.fp, b.fn_, b.f1));
}

// ── majority baseline ─────────────────────────────────────────────────────

fn doc_with(id: &str, labels: &[(usize, Polarity)]) -> Document {
    let mut map: BTreeMap<usize, Vec<Polarity>> = BTreeMap::new();
    for &(a, p) in labels {
        map.entry(a).or_default().push(p);
    }
    Document::new(id.into(), "text".into(), map, Split::Train)
}

#[test]
fn majority_baseline_picks_dominant_pair() {
    let mut docs = Vec::new();
    for i in 0..7 {
        docs.push(doc_with(&format!("a{i}"), &[(0, Polarity::Negative)]));
    }
    for i in 0..3 {
        docs.push(doc_with(&format!("b{i}"), &[(1, Polarity::Positive)]));
    }
    let baseline = MajorityBaseline::fit(&docs).unwrap();
    assert_eq!((baseline.aspect, baseline.polarity), (0, Polarity::Negative));
    let set = baseline.predict();
    assert_eq!(set.items.len(), 1);
    assert_eq!(set.items[&0].0, Polarity::Negative);
}

#[test]
fn majority_baseline_tie_breaks_lexicographically() {
    let docs = vec![
        doc_with("a", &[(2, Polarity::Neutral)]),
        doc_with("b", &[(1, Polarity::Negative)]),
        doc_with("c", &[(1, Polarity::Positive)]),
        doc_with("d", &[(2, Polarity::Neutral)]),
        doc_with("e", &[(1, Polarity::Positive)]),
        doc_with("f", &[(1, Polarity::Negative)]),
    ];
    // (1, positive=1) vs (1, negative=2) vs (2, neutral=3), each count 2:
    // the smallest (aspect, class) pair wins.
    let baseline = MajorityBaseline::fit(&docs).unwrap();
    assert_eq!((baseline.aspect, baseline.polarity), (1, Polarity::Positive));
}

#[test]
fn majority_baseline_aspect_only_recall_is_majority_aspect_fraction() {
    let docs = vec![
        doc_with("a", &[(0, Polarity::Negative), (1, Polarity::Positive)]),
        doc_with("b", &[(0, Polarity::Negative)]),
        doc_with("c", &[(2, Polarity::Neutral)]),
        doc_with("d", &[(0, Polarity::Positive)]),
    ];
    let baseline = MajorityBaseline::fit(&docs).unwrap();
    assert_eq!(baseline.aspect, 0);
    let report = baseline.evaluate(&docs, TaskMode::AspectOnly).unwrap();
    // Gold pairs: (a,0),(a,1),(b,0),(c,2),(d,0) = 5 items; the baseline
    // recovers the three aspect-0 ones.
    assert_abs_diff_eq!(report.recall, 3.0 / 5.0, epsilon = 1e-12);
}

// ── reference grid ────────────────────────────────────────────────────────

#[test]
fn reference_grid_is_complete_and_has_expected_cells() {
    assert_eq!(REFERENCE_ASPECT_SENTIMENT.len(), 12 * 3);
    assert_eq!(REFERENCE_ASPECT_ONLY.len(), 6 * 3);
    assert_eq!(
        reference_f1(
            ArchId::E2eCnn,
            EmbeddingKind::Fasttext,
            Split::Dev,
            TaskMode::AspectSentiment
        ),
        Some(0.511)
    );
    assert_eq!(
        reference_f1(
            ArchId::E2eCnn,
            EmbeddingKind::Fasttext,
            Split::TestDia,
            TaskMode::AspectOnly
        ),
        Some(0.557)
    );
    assert_eq!(
        reference_f1(
            ArchId::PipeCnn,
            EmbeddingKind::Fasttext,
            Split::TestSyn,
            TaskMode::AspectSentiment
        ),
        Some(0.295)
    );
    // Pipelines were not scored on the aspect-only task.
    assert_eq!(
        reference_f1(
            ArchId::PipeCnn,
            EmbeddingKind::Fasttext,
            Split::Dev,
            TaskMode::AspectOnly
        ),
        None
    );
}

#[test]
fn attach_reference_reports_delta() {
    let mut report = EvalReport {
        task: TaskMode::AspectSentiment,
        split: Some(Split::Dev),
        precision: 0.5,
        recall: 0.5,
        f1: 0.531,
        tp: 1,
        fp: 1,
        fn_: 1,
        resolved_conflicts: 0,
        reference_f1: None,
        reference_delta: None,
    };
    attach_reference(&mut report, ArchId::E2eCnn, EmbeddingKind::Fasttext);
    assert_eq!(report.reference_f1, Some(0.511));
    assert_abs_diff_eq!(report.reference_delta.unwrap(), 0.02, epsilon = 1e-12);
    // No grid cell → no delta.
    let mut none = report.clone();
    none.reference_f1 = None;
    none.reference_delta = None;
    none.split = None;
    attach_reference(&mut none, ArchId::E2eCnn, EmbeddingKind::Fasttext);
    assert_eq!(none.reference_f1, None);
}
