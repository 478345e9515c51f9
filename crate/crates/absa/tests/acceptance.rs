//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured numbers (run with `--nocapture` to see them).

use std::collections::BTreeMap;
use std::time::Instant;

use absa::corpus::{
    filter_conflicts, from_label_vector, to_label_vector, AspectCatalog, LabelVector, Polarity,
    Split,
};
use absa::embed::{EmbeddingTable, Vocabulary};
use absa::eval::{
    attach_reference, evaluate, micro_f1, EmbeddingKind, EvalReport, TaskMode,
    REFERENCE_ASPECT_ONLY, REFERENCE_ASPECT_SENTIMENT,
};
use absa::fixtures::{self, PrecomputedDetector, TriggerConfig};
use absa::model::gradcheck::{gradient_check, CheckInstance};
use absa::model::{ArchId, ModelConfig, PredictionSet, TrainedModel};
use absa::tensor::{clip_grad_norm, softmax, Tensor};
use absa::train::{split_documents, train, HyperConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_model_config(n_aspects: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        filters_per_width: 4,
        filter_widths: vec![3, 4, 5],
        hidden: 6,
        aspect_embed_dim: 5,
        dropout: 0.5,
        n_aspects,
    }
}

/// 50-token vocabulary with a 20-bucket subword table, values ±0.5.
fn toy_table(seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokens: Vec<String> = (0..50).map(|i| format!("wort{i:02}")).collect();
    let vocab = Vocabulary::from_counts(tokens.into_iter().map(|t| (t, 1)).collect());
    let dim = 8;
    let words: Vec<f64> = (0..50 * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let buckets: Vec<f64> = (0..20 * dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
    EmbeddingTable::new(vocab, dim, words, buckets, 20, 3, 6).unwrap()
}

/// Check model at a well-conditioned parameter point (weights ±0.5).
fn check_model(arch: ArchId, seed: u64) -> TrainedModel {
    let catalog = AspectCatalog::new(vec!["A0".into(), "A1".into(), "A2".into()]).unwrap();
    let mut model =
        TrainedModel::init(arch, toy_model_config(3), catalog, toy_table(seed), seed).unwrap();
    for t in model.params.params_mut() {
        for v in t.data_mut() {
            *v *= 10.0;
        }
    }
    model
}

fn check_tokens() -> Vec<String> {
    // Mixes in-vocabulary tokens (repeats included) with an OOV form so
    // both the word rows and the subword buckets receive gradients.
    ["wort00", "wort07", "wort31", "wort07", "zugfahrten", "wort49"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

#[test]
fn criterion_1_gradient_correctness() {
    let started = Instant::now();
    let joint = vec![CheckInstance::Joint {
        tokens: check_tokens(),
        gold: LabelVector(vec![1, 0, 3]),
    }];
    let aspect = vec![CheckInstance::Aspect {
        tokens: check_tokens(),
        aspect: 2,
        polarity: Polarity::Neutral,
    }];
    let cases = [
        (ArchId::E2eCnn, &joint, 101u64),
        (ArchId::E2eLstm, &joint, 102),
        (ArchId::PipeCnn, &aspect, 103),
        (ArchId::PipeLstm, &aspect, 104),
    ];
    for (arch, instances, seed) in cases {
        let model = check_model(arch, seed);
        let report = gradient_check(&model, instances, seed ^ 0xfeed, 1e-5).unwrap();
        assert!(
            report.p95 <= 1e-4,
            "{arch}: p95 relative error {} > 1e-4",
            report.p95
        );
        assert!(
            report.max <= 1e-3,
            "{arch}: max relative error {} > 1e-3",
            report.max
        );
        println!(
            "ACCEPTANCE 1 {arch}: PASS ({} coordinates, p95 {:.2e}, max {:.2e})",
            report.coordinates, report.p95, report.max
        );
    }
    let elapsed = started.elapsed();
    assert!(
        elapsed.as_secs() < 60,
        "gradient checks took {elapsed:?}, budget is 60 s"
    );
    println!("ACCEPTANCE 1 runtime: PASS ({elapsed:?} < 60 s)");
}

#[test]
fn criterion_2_loss_identities() {
    // All-uniform predictions: joint loss exactly |A|·ln4 within 1e-9.
    let gold = LabelVector(vec![0; 20]);
    let dists = vec![Tensor::vector(vec![0.25; 4]); 20];
    let loss = absa::model::joint_loss(&dists, &gold).unwrap();
    let expected = 20.0 * 4.0f64.ln();
    assert!(
        (loss - expected).abs() < 1e-9,
        "joint loss {loss} vs 20·ln4 {expected}"
    );

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..200 {
        let logits: Vec<f64> = (0..4).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let p = softmax(&Tensor::vector(logits.clone()));
        let sum: f64 = p.data().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "softmax sum {sum}");
        let c = rng.gen_range(-40.0..40.0);
        let shifted = softmax(&Tensor::vector(logits.iter().map(|x| x + c).collect()));
        for (a, b) in p.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-12, "shift invariance violated: {a} vs {b}");
        }
    }
    println!(
        "ACCEPTANCE 2 loss-identities: PASS (20·ln4 = {expected:.12}, sums within 1e-9, \
         shift invariance within 1e-12)"
    );
}

/// Brute-force oracle for micro F1: plain per-item membership loops.
fn brute_force_counts(
    predictions: &BTreeMap<String, PredictionSet>,
    golds: &BTreeMap<String, BTreeMap<usize, Polarity>>,
    task: TaskMode,
) -> (usize, usize, usize) {
    let project = |p: Polarity| match task {
        TaskMode::AspectSentiment => Some(p),
        TaskMode::AspectOnly => None,
    };
    let mut pred_items: Vec<(String, usize, Option<Polarity>)> = Vec::new();
    for (id, set) in predictions {
        for (&a, &(p, _)) in &set.items {
            let item = (id.clone(), a, project(p));
            if !pred_items.contains(&item) {
                pred_items.push(item);
            }
        }
    }
    let mut gold_items: Vec<(String, usize, Option<Polarity>)> = Vec::new();
    for (id, labels) in golds {
        for (&a, &p) in labels {
            let item = (id.clone(), a, project(p));
            if !gold_items.contains(&item) {
                gold_items.push(item);
            }
        }
    }
    let tp = pred_items
        .iter()
        .filter(|item| gold_items.contains(item))
        .count();
    (tp, pred_items.len() - tp, gold_items.len() - tp)
}

#[test]
fn criterion_3_evaluator_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
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
                    p.items.insert(a, (Polarity::ALL[rng.gen_range(0..3)], 1.0));
                }
                if rng.gen_bool(0.5) {
                    g.insert(a, Polarity::ALL[rng.gen_range(0..3)]);
                }
            }
            predictions.insert(id.clone(), p);
            golds.insert(id, g);
        }
        let mut f1s = [0.0f64; 2];
        for (i, task) in [TaskMode::AspectSentiment, TaskMode::AspectOnly]
            .into_iter()
            .enumerate()
        {
            let report = micro_f1(&predictions, &golds, task).unwrap();
            let (tp, fp, fn_) = brute_force_counts(&predictions, &golds, task);
            assert_eq!(
                (report.tp, report.fp, report.fn_),
                (tp, fp, fn_),
                "case {case} task {task}: counts disagree with brute force"
            );
            f1s[i] = report.f1;
        }
        assert!(
            f1s[1] >= f1s[0] - 1e-12,
            "case {case}: aspect-only F1 {} < aspect+sentiment F1 {}",
            f1s[1],
            f1s[0]
        );
    }
    println!("ACCEPTANCE 3 evaluator-oracle: PASS (1000 instances, both modes, exact agreement)");
}

fn overfit_fixture() -> (Vec<absa::corpus::Document>, AspectCatalog, EmbeddingTable) {
    let cfg = TriggerConfig::default(); // 32 training documents
    let (docs, catalog) = fixtures::trigger_dataset(&cfg);
    let (train_docs, _, _, _) = split_documents(docs);
    assert_eq!(train_docs.len(), 32);
    let table = fixtures::trigger_table(cfg.n_aspects, 16, 7, 8.0);
    (train_docs, catalog, table)
}

fn small_model_config(n_aspects: usize) -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        filters_per_width: 8,
        filter_widths: vec![3, 4, 5],
        hidden: 8,
        aspect_embed_dim: 5,
        dropout: 0.5,
        n_aspects,
    }
}

#[test]
fn criterion_4_synthetic_overfit_cnn() {
    let (train_docs, catalog, table) = overfit_fixture();
    let hyper = HyperConfig {
        lr: 0.3,
        epochs: 200,
        ..HyperConfig::defaults(ArchId::E2eCnn)
    };
    let started = Instant::now();
    let (model, history) = train(
        ArchId::E2eCnn,
        &small_model_config(catalog.len()),
        &catalog,
        table,
        &train_docs,
        &train_docs, // memorization: early stopping tracks the train set
        &hyper,
        None,
    )
    .unwrap();
    let elapsed = started.elapsed();
    let report = evaluate(&model, &train_docs, TaskMode::AspectSentiment, None).unwrap();
    assert!(
        report.f1 >= 0.95,
        "CNN train micro-F1 {} after {} epochs",
        report.f1,
        history.epochs.len()
    );
    assert!(history.epochs.len() <= 200);
    assert!(elapsed.as_secs() < 120, "CNN overfit took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 e2e-cnn: PASS (train F1 {:.3} in {} epochs, {elapsed:?} < 2 min)",
        report.f1,
        history.epochs.len()
    );
}

#[test]
fn criterion_4_synthetic_overfit_lstm() {
    let (train_docs, catalog, _) = overfit_fixture();
    // The LSTM needs stronger inputs than the CNN to move off uniform
    // within the early-stopping patience.
    let table = fixtures::trigger_table(catalog.len(), 16, 7, 16.0);
    let hyper = HyperConfig {
        lr: 1.0,
        epochs: 400,
        dropout: 0.0, // memorization check: regularization off
        ..HyperConfig::defaults(ArchId::E2eLstm)
    };
    let started = Instant::now();
    let (model, history) = train(
        ArchId::E2eLstm,
        &small_model_config(catalog.len()),
        &catalog,
        table,
        &train_docs,
        &train_docs,
        &hyper,
        None,
    )
    .unwrap();
    let elapsed = started.elapsed();
    let report = evaluate(&model, &train_docs, TaskMode::AspectSentiment, None).unwrap();
    assert!(
        report.f1 >= 0.95,
        "LSTM train micro-F1 {} after {} epochs",
        report.f1,
        history.epochs.len()
    );
    assert!(history.epochs.len() <= 400);
    assert!(elapsed.as_secs() < 120, "LSTM overfit took {elapsed:?}");
    println!(
        "ACCEPTANCE 4 e2e-lstm: PASS (train F1 {:.3} in {} epochs, {elapsed:?} < 2 min)",
        report.f1,
        history.epochs.len()
    );
}

#[test]
fn criterion_5_end_to_end_beats_pipeline_with_capped_detector() {
    let cfg = TriggerConfig {
        n_train: 48,
        n_dev: 16,
        n_test: 24,
        ..TriggerConfig::default()
    };
    let (docs, catalog) = fixtures::trigger_dataset(&cfg);
    let (train_docs, dev_docs, test_docs, _) = split_documents(docs);
    let table = fixtures::trigger_table(cfg.n_aspects, 16, 7, 8.0);
    let model_cfg = small_model_config(catalog.len());

    let e2e_hyper = HyperConfig {
        lr: 0.3,
        epochs: 200,
        ..HyperConfig::defaults(ArchId::E2eCnn)
    };
    let (e2e, _) = train(
        ArchId::E2eCnn,
        &model_cfg,
        &catalog,
        table.clone(),
        &train_docs,
        &dev_docs,
        &e2e_hyper,
        None,
    )
    .unwrap();

    let pipe_hyper = HyperConfig {
        lr: 0.3,
        epochs: 200,
        arch: ArchId::PipeCnn,
        ..HyperConfig::defaults(ArchId::PipeCnn)
    };
    let (pipe, _) = train(
        ArchId::PipeCnn,
        &model_cfg,
        &catalog,
        table,
        &train_docs,
        &dev_docs,
        &pipe_hyper,
        None,
    )
    .unwrap();

    // Oracle detector with recall capped at 0.7 by construction: every
    // gold (doc, aspect) item with index ≡ 7,8,9 (mod 10) is withheld.
    let detector = PrecomputedDetector::capped_oracle(&test_docs, 7);
    let recall = detector.recall(&test_docs);
    assert!(recall <= 0.7 + 1e-9, "constructed recall {recall}");

    let e2e_report = evaluate(&e2e, &test_docs, TaskMode::AspectSentiment, None).unwrap();
    let pipe_report =
        evaluate(&pipe, &test_docs, TaskMode::AspectSentiment, Some(&detector)).unwrap();
    assert!(
        e2e_report.f1 > pipe_report.f1,
        "end-to-end F1 {} did not exceed pipeline F1 {}",
        e2e_report.f1,
        pipe_report.f1
    );
    println!(
        "ACCEPTANCE 5 e2e-vs-pipeline: PASS (e2e {:.3} > pipeline {:.3}, detector recall {:.2})",
        e2e_report.f1, pipe_report.f1, recall
    );
}

#[test]
fn criterion_6_reference_delta_reporting() {
    // Desk-scale runs are not expected to reproduce the reference numbers;
    // the harness must, however, use the same metric definitions and report
    // deltas against them. Verified here on the reference grid itself plus
    // a synthetic evaluation.
    assert_eq!(REFERENCE_ASPECT_SENTIMENT.len(), 36);
    assert_eq!(REFERENCE_ASPECT_ONLY.len(), 18);

    let mut report = EvalReport {
        task: TaskMode::AspectSentiment,
        split: Some(Split::Dev),
        precision: 0.4,
        recall: 0.4,
        f1: 0.4,
        tp: 4,
        fp: 6,
        fn_: 6,
        resolved_conflicts: 0,
        reference_f1: None,
        reference_delta: None,
    };
    attach_reference(&mut report, ArchId::E2eCnn, EmbeddingKind::Fasttext);
    assert_eq!(report.reference_f1, Some(0.511));
    assert!((report.reference_delta.unwrap() - (0.4 - 0.511)).abs() < 1e-12);

    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["reference_f1"], 0.511);
    println!(
        "ACCEPTANCE 6 reference-deltas: PASS (grid 36+18 cells, delta emitted; \
         official-data directional check is best-effort and not gated here)"
    );
}

/// Best-effort directional check on the official data: end-to-end CNN with
/// subword embeddings should top the dev grid. Requires ABSA_GERMEVAL_DIR
/// with train/dev TSVs and an embeddings file; ignored by default.
#[test]
#[ignore]
fn criterion_6_directional_check_official_data() {
    let dir = std::env::var("ABSA_GERMEVAL_DIR")
        .expect("set ABSA_GERMEVAL_DIR to run the directional check");
    let dir = std::path::Path::new(&dir);
    let catalog = AspectCatalog::load(&dir.join("aspects.txt")).unwrap();
    let train_docs = absa::corpus::parse_dataset(&dir.join("train.tsv"), &catalog, Split::Train)
        .unwrap();
    let (train_docs, _) = filter_conflicts(train_docs, &catalog);
    let dev_docs =
        absa::corpus::parse_dataset(&dir.join("dev.tsv"), &catalog, Split::Dev).unwrap();
    let table = absa::embed::load_embeddings(&dir.join("embeddings.vec"), None).unwrap();
    let mut best: Option<(ArchId, f64)> = None;
    for arch in [ArchId::E2eCnn, ArchId::E2eLstm] {
        let cfg = ModelConfig::defaults(catalog.len());
        let hyper = HyperConfig::defaults(arch);
        let (model, _) = train(
            arch,
            &cfg,
            &catalog,
            table.clone(),
            &train_docs,
            &dev_docs,
            &hyper,
            None,
        )
        .unwrap();
        let report = evaluate(&model, &dev_docs, TaskMode::AspectSentiment, None).unwrap();
        println!("directional check: {arch} dev F1 {:.3}", report.f1);
        if best.as_ref().is_none_or(|(_, f)| report.f1 > *f) {
            best = Some((arch, report.f1));
        }
    }
    let (best_arch, _) = best.unwrap();
    assert_eq!(best_arch, ArchId::E2eCnn);
}

#[test]
fn criterion_8_clipping_and_encoding_contracts() {
    // Post-clip global norm ≤ 5 + 1e-9 on random gradients.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let mut grads: Vec<Tensor> = (0..rng.gen_range(1..5))
            .map(|_| {
                let len = rng.gen_range(1..20);
                Tensor::vector((0..len).map(|_| rng.gen_range(-50.0..50.0)).collect())
            })
            .collect();
        clip_grad_norm(&mut grads, 5.0);
        let norm: f64 = grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        assert!(norm <= 5.0 + 1e-9, "post-clip norm {norm}");
    }

    // Label-vector round-trip on 10,000 random conflict-free maps.
    let catalog = AspectCatalog::default_catalog();
    for _ in 0..10_000 {
        let mut labels = BTreeMap::new();
        for aspect in 0..20 {
            if rng.gen_bool(0.3) {
                labels.insert(aspect, Polarity::ALL[rng.gen_range(0..3)]);
            }
        }
        let z = to_label_vector(&labels, &catalog).unwrap();
        assert_eq!(z.len(), 20);
        let back = from_label_vector(&z, &catalog).unwrap();
        assert_eq!(back, labels);
    }

    // Conflict filter drops exactly the constructed 4% of a 100-document
    // training fixture.
    let docs = fixtures::conflict_fixture(100, 4);
    let (kept, report) = filter_conflicts(docs, &catalog);
    assert_eq!(report.input_count, 100);
    assert_eq!(report.dropped, 4);
    assert_eq!(kept.len(), 96);

    println!(
        "ACCEPTANCE 8 contracts: PASS (clip ≤ 5+1e-9 on 100 random bundles, 10,000 label \
         round-trips exact, conflict filter dropped 4/100)"
    );
}
