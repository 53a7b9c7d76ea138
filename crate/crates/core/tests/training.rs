use std::cell::RefCell;
use std::collections::HashSet;
use std::path::Path;

use rosebreed_core::dataset::{
    augment_training_set, ingest_dataset, split_dataset, synthetic, AugmentationConfig,
    DatasetManifest, ImageRecord, IngestOptions, PixelTensor, Split, SplitOptions,
};
use rosebreed_core::models::{build_classifier, stub_classifier, BackboneFamily, BackboneSpec, Precision};
use rosebreed_core::training::{
    evaluate_epoch, train, Predictor, TrainingConfig, ValidationSource,
};
use rosebreed_core::{Error, Result};

fn toy_manifest(root: &Path, classes: &[&str], per_class: usize) -> DatasetManifest {
    synthetic::write_shape_corpus(root, classes, per_class, 16, 3).unwrap();
    let m = ingest_dataset(root, &IngestOptions::default()).unwrap();
    split_dataset(&m, &SplitOptions::new(0.8, 1)).unwrap()
}

fn quick(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size: 8,
        learning_rate: 1e-2,
        ..TrainingConfig::default()
    }
}

#[test]
fn toy_two_class_set_is_fit_in_twenty_epochs() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["red", "yellow"], 50);
    let mut clf = stub_classifier(2, 16, 21).unwrap();
    let out = train(&mut clf, &m, &quick(20)).unwrap();
    let h = &out.history;
    assert_eq!(h.len(), 20);
    for list in [&h.train_accuracy, &h.val_accuracy] {
        assert!(list.iter().all(|a| (0.0..=1.0).contains(a)));
    }
    for list in [&h.train_loss, &h.val_loss] {
        assert!(list.iter().all(|l| l.is_finite() && *l >= 0.0));
    }
    assert_eq!(h.epoch_seconds.len(), 20);
    let last = h.last().unwrap();
    assert!(last.train_accuracy > 0.95, "{:?}", h.train_accuracy);
}

#[test]
fn training_consumes_generated_images_and_never_test_images() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(&dir.path().join("raw"), &["a", "b"], 10);
    let cfg = AugmentationConfig {
        multiplier: 2,
        ..AugmentationConfig::default()
    };
    let m = augment_training_set(&m, &cfg, &dir.path().join("gen")).unwrap();
    let mut clf = stub_classifier(2, 16, 1).unwrap();
    let out = train(&mut clf, &m, &quick(2)).unwrap();

    let consumed: HashSet<_> = out.audit.train_paths.iter().collect();
    let test: HashSet<_> = m.test_records().map(|r| &r.path).collect();
    assert!(consumed.is_disjoint(&test));
    let expected: HashSet<_> = m.train_records().map(|r| &r.path).collect();
    assert_eq!(consumed, expected);
    assert_eq!(out.audit.train_paths.len(), 16 + 32);
    assert_eq!(
        out.audit.validation_paths.iter().collect::<HashSet<_>>(),
        test
    );
}

#[test]
fn identical_seeds_reproduce_ordering_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["a", "b"], 12);
    let run = |seed: u64| {
        let mut clf = stub_classifier(2, 16, 4).unwrap();
        let cfg = TrainingConfig {
            shuffle_seed: seed,
            ..quick(3)
        };
        train(&mut clf, &m, &cfg).unwrap()
    };
    let (a, b, c) = (run(9), run(9), run(10));
    assert_eq!(a.audit, b.audit);
    assert_eq!(a.history.train_loss, b.history.train_loss);
    assert_eq!(a.history.val_accuracy, b.history.val_accuracy);
    assert_ne!(a.audit.epoch_order_digests, c.audit.epoch_order_digests);
    let distinct: HashSet<_> = a.audit.epoch_order_digests.iter().collect();
    assert_eq!(distinct.len(), 3, "each epoch reshuffles");
}

#[test]
fn one_epoch_gives_one_history_row() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["a", "b"], 6);
    let mut clf = stub_classifier(2, 16, 2).unwrap();
    let out = train(&mut clf, &m, &quick(1)).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_eq!(out.history.val_loss.len(), 1);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["a", "b", "c"], 8);
    let mut clf = stub_classifier(3, 16, 8).unwrap();
    let (ext, head) = (clf.extractor_checksum().unwrap(), clf.head_checksum().unwrap());
    let cfg = TrainingConfig {
        learning_rate: 0.0,
        ..quick(4)
    };
    let out = train(&mut clf, &m, &cfg).unwrap();
    assert_eq!(clf.extractor_checksum().unwrap(), ext);
    assert_eq!(clf.head_checksum().unwrap(), head);
    let first = out.history.train_loss[0];
    for l in &out.history.train_loss {
        assert!((l - first).abs() < 1e-12, "{:?}", out.history.train_loss);
    }
    assert!(out.history.val_loss.iter().all(|&l| l == out.history.val_loss[0]));
}

#[test]
fn frozen_extractor_stays_bit_identical_while_the_head_moves() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["a", "b"], 5);
    let mut clf = stub_classifier(2, 16, 6).unwrap();
    let (ext, head) = (clf.extractor_checksum().unwrap(), clf.head_checksum().unwrap());
    let cfg = TrainingConfig {
        batch_size: 64,
        ..quick(1)
    };
    train(&mut clf, &m, &cfg).unwrap();
    assert_eq!(clf.extractor_checksum().unwrap(), ext);
    assert_ne!(clf.head_checksum().unwrap(), head);
}

#[test]
fn fine_tuning_the_top_block_moves_the_extractor() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["a", "b"], 5);
    let spec = BackboneSpec {
        fine_tune_top: 1,
        precision: Precision::F64,
        ..BackboneSpec::new(BackboneFamily::Micro)
            .with_input_size((16, 16))
            .random_init(6)
    };
    let mut clf = build_classifier(&spec, 2).unwrap();
    let frozen_total = stub_classifier(2, 16, 6).unwrap().describe().trainable_parameters;
    assert!(clf.describe().trainable_parameters > frozen_total);
    let ext = clf.extractor_checksum().unwrap();
    train(&mut clf, &m, &quick(1)).unwrap();
    assert_ne!(clf.extractor_checksum().unwrap(), ext);
}

#[test]
fn holdout_validation_keeps_generated_children_with_their_source() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(&dir.path().join("raw"), &["a", "b"], 10);
    let cfg = AugmentationConfig {
        multiplier: 1,
        ..AugmentationConfig::default()
    };
    let m = augment_training_set(&m, &cfg, &dir.path().join("gen")).unwrap();
    let mut clf = stub_classifier(2, 16, 1).unwrap();
    let tc = TrainingConfig {
        validation: ValidationSource::HoldoutFraction { fraction: 0.25 },
        ..quick(1)
    };
    let out = train(&mut clf, &m, &tc).unwrap();
    let test: HashSet<_> = m.test_records().map(|r| r.path.clone()).collect();
    let val: HashSet<_> = out.audit.validation_paths.iter().cloned().collect();
    let fit: HashSet<_> = out.audit.train_paths.iter().cloned().collect();
    assert!(val.is_disjoint(&test) && fit.is_disjoint(&test) && fit.is_disjoint(&val));
    // Two of eight collected training images per class, each with one child.
    assert_eq!(val.len(), 2 * 2 * 2);
    for r in m.train_records().filter(|r| r.source_id.is_some()) {
        let source = Path::new(r.source_id.as_ref().unwrap()).to_path_buf();
        assert_eq!(val.contains(&r.path), val.contains(&source));
    }
}

#[test]
fn training_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["a", "b"], 6);

    let mut three = stub_classifier(3, 16, 1).unwrap();
    assert!(matches!(train(&mut three, &m, &quick(1)), Err(Error::Training(_))));

    let unsplit = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap();
    let mut clf = stub_classifier(2, 16, 1).unwrap();
    assert!(train(&mut clf, &unsplit, &quick(1)).is_err());

    let mut lopsided = m.clone();
    for r in lopsided.records.iter_mut().filter(|r| r.label == 1) {
        r.split = Some(Split::Test);
    }
    let err = train(&mut clf, &lopsided, &quick(1)).unwrap_err();
    assert!(err.to_string().contains("no training images"), "{err}");

    assert!(train(&mut clf, &m, &TrainingConfig { epochs: 0, ..quick(1) }).is_err());

    let explode = TrainingConfig {
        learning_rate: 1e38,
        batch_size: 2,
        ..quick(3)
    };
    let single = BackboneSpec::new(BackboneFamily::Micro)
        .with_input_size((16, 16))
        .random_init(1);
    let mut clf = build_classifier(&single, 2).unwrap();
    match train(&mut clf, &m, &explode) {
        Err(Error::NonFiniteLoss { epoch }) => assert_eq!(epoch, 1),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

/// Replays fixed score rows in call order.
struct Replay {
    rows: RefCell<std::vec::IntoIter<Vec<f64>>>,
}

impl Replay {
    fn new(rows: Vec<Vec<f64>>) -> Self {
        Self {
            rows: RefCell::new(rows.into_iter()),
        }
    }
}

impl Predictor for Replay {
    fn input_size(&self) -> (usize, usize) {
        (16, 16)
    }

    fn num_classes(&self) -> usize {
        5
    }

    fn predict_batch(&self, images: &[PixelTensor]) -> Result<Vec<Vec<f64>>> {
        let mut it = self.rows.borrow_mut();
        Ok(images.iter().map(|_| it.next().expect("enough rows")).collect())
    }
}

fn five_class_records(dir: &Path, per_class: usize) -> (DatasetManifest, Vec<ImageRecord>) {
    synthetic::write_shape_corpus(dir, &["a", "b", "c", "d", "e"], per_class, 16, 3).unwrap();
    let m = ingest_dataset(dir, &IngestOptions::default()).unwrap();
    let records: Vec<ImageRecord> = m.records.clone();
    (m, records)
}

#[test]
fn one_hot_oracle_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let (_, records) = five_class_records(dir.path(), 2);
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let rows = records
        .iter()
        .map(|r| (0..5).map(|c| if c == usize::from(r.label) { 1.0 } else { 0.0 }).collect())
        .collect();
    let s = evaluate_epoch(&Replay::new(rows), &refs, 255.0, 3).unwrap();
    assert_eq!(s.accuracy, 1.0);
    assert_eq!(s.loss, 0.0);
}

#[test]
fn uniform_predictor_has_ln5_loss() {
    let dir = tempfile::tempdir().unwrap();
    let (_, records) = five_class_records(dir.path(), 2);
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let s = evaluate_epoch(&Replay::new(vec![vec![0.2; 5]; 10]), &refs, 255.0, 4).unwrap();
    assert!((s.loss - 5f64.ln()).abs() < 1e-12);
    // All ties resolve to class 0: one of five balanced classes.
    assert!((s.accuracy - 0.2).abs() < 1e-12);
}

#[test]
fn fixed_scores_match_brute_force_recomputation() {
    use rand::{Rng, SeedableRng};
    let dir = tempfile::tempdir().unwrap();
    let (_, records) = five_class_records(dir.path(), 2);
    let refs: Vec<&ImageRecord> = records.iter().collect();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<Vec<f64>> = (0..10)
        .map(|_| {
            let raw: Vec<f64> = (0..5).map(|_| rng.random_range(0.01..1.0)).collect();
            let sum: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / sum).collect()
        })
        .collect();
    let s = evaluate_epoch(&Replay::new(rows.clone()), &refs, 255.0, 3).unwrap();

    let mut correct = 0;
    let mut total_loss = 0.0;
    for (r, row) in records.iter().zip(&rows) {
        let mut best = 0;
        for c in 1..5 {
            if row[c] > row[best] {
                best = c;
            }
        }
        if best == usize::from(r.label) {
            correct += 1;
        }
        total_loss += -row[usize::from(r.label)].ln();
    }
    assert_eq!(s.accuracy, correct as f64 / 10.0);
    assert!((s.loss - total_loss / 10.0).abs() < 1e-12);
    assert_eq!(s.scores, rows);
}

#[test]
fn evaluation_never_mutates_weights() {
    let dir = tempfile::tempdir().unwrap();
    let m = toy_manifest(dir.path(), &["a", "b"], 5);
    let clf = stub_classifier(2, 16, 3).unwrap();
    let before = (clf.extractor_checksum().unwrap(), clf.head_checksum().unwrap());
    let test: Vec<&ImageRecord> = m.test_records().collect();
    let s = evaluate_epoch(&clf, &test, 255.0, 4).unwrap();
    assert_eq!(s.labels.len(), test.len());
    assert_eq!(before, (clf.extractor_checksum().unwrap(), clf.head_checksum().unwrap()));
    assert!(evaluate_epoch(&clf, &[], 255.0, 4).is_err());
}
