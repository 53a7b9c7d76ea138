//! Head training over cached frozen-extractor activations, with per-epoch
//! metrics and an audit of exactly which images were consumed.

mod config;
mod history;
mod optim;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::time::Instant;

use candle_core::{DType, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{LossKind, OptimizerKind, TrainingConfig, ValidationSource, TRAINING_CONFIG_SCHEMA_VERSION};
pub use history::{EpochMetrics, TrainingHistory, HISTORY_CSV_HEADER};

use crate::dataset::{load_preprocessed, DatasetManifest, ImageRecord, PixelTensor, Provenance};
use crate::error::{Error, Result};
use crate::evaluation::accuracy_and_loss;
use crate::models::Classifier;
use crate::util::{derive_seed, round_half_up, sha256_hex};

/// Anything that maps preprocessed images to class-probability rows.
pub trait Predictor {
    fn input_size(&self) -> (usize, usize);
    fn num_classes(&self) -> usize;
    fn predict_batch(&self, images: &[PixelTensor]) -> Result<Vec<Vec<f64>>>;
}

impl Predictor for Classifier {
    fn input_size(&self) -> (usize, usize) {
        Classifier::input_size(self)
    }

    fn num_classes(&self) -> usize {
        Classifier::num_classes(self)
    }

    fn predict_batch(&self, images: &[PixelTensor]) -> Result<Vec<Vec<f64>>> {
        self.predict(images)
    }
}

fn load_batch(records: &[&ImageRecord], size: (usize, usize), rescale: f64) -> Result<Vec<PixelTensor>> {
    records
        .par_iter()
        .map(|r| load_preprocessed(&r.path, size, rescale))
        .collect()
}

/// Scores for a record list, in record order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRecords {
    pub labels: Vec<usize>,
    pub scores: Vec<Vec<f64>>,
    pub accuracy: f64,
    pub loss: f64,
}

/// Runs `predictor` over `records` and reports accuracy and mean
/// categorical cross-entropy alongside the raw scores.
pub fn evaluate_epoch<P: Predictor + ?Sized>(
    predictor: &P,
    records: &[&ImageRecord],
    rescale_factor: f64,
    batch_size: usize,
) -> Result<ScoredRecords> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no records to evaluate".into()));
    }
    let size = predictor.input_size();
    let mut scores = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let images = load_batch(chunk, size, rescale_factor)?;
        scores.extend(predictor.predict_batch(&images)?);
    }
    let labels: Vec<usize> = records.iter().map(|r| usize::from(r.label)).collect();
    let (accuracy, loss) = accuracy_and_loss(&labels, &scores)?;
    Ok(ScoredRecords {
        labels,
        scores,
        accuracy,
        loss,
    })
}

/// What a training run consumed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingAudit {
    pub train_paths: Vec<PathBuf>,
    pub validation_paths: Vec<PathBuf>,
    /// SHA-256 over each epoch's visiting order.
    pub epoch_order_digests: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub history: TrainingHistory,
    pub audit: TrainingAudit,
}

fn partition<'a>(
    manifest: &'a DatasetManifest,
    config: &TrainingConfig,
) -> Result<(Vec<&'a ImageRecord>, Vec<&'a ImageRecord>)> {
    let train: Vec<&ImageRecord> = manifest.train_records().collect();
    match config.validation {
        ValidationSource::TestSplit => Ok((train, manifest.test_records().collect())),
        ValidationSource::HoldoutFraction { fraction } => {
            let mut by_class: BTreeMap<u16, Vec<String>> = BTreeMap::new();
            for r in &train {
                if r.provenance == Provenance::Collected {
                    by_class.entry(r.label).or_default().push(r.record_id());
                }
            }
            let mut held: HashSet<String> = HashSet::new();
            for (label, mut ids) in by_class {
                let take = round_half_up(fraction * ids.len() as f64).min(ids.len().saturating_sub(1));
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.shuffle_seed, &format!("holdout-{label}")));
                ids.shuffle(&mut rng);
                held.extend(ids.into_iter().take(take));
            }
            let is_held = |r: &ImageRecord| {
                held.contains(&r.record_id())
                    || r.source_id.as_ref().is_some_and(|s| held.contains(s))
            };
            let (val, fit): (Vec<&ImageRecord>, Vec<&ImageRecord>) =
                train.into_iter().partition(|r| is_held(r));
            Ok((fit, val))
        }
    }
}

fn cache_activations(
    classifier: &Classifier,
    records: &[&ImageRecord],
    rescale: f64,
    batch_size: usize,
) -> Result<Tensor> {
    let size = classifier.input_size();
    let mut parts = Vec::new();
    for chunk in records.chunks(batch_size) {
        let images = load_batch(chunk, size, rescale)?;
        let batch = classifier.batch_tensor(&images)?;
        parts.push(classifier.frozen_activations(&batch)?);
    }
    Ok(Tensor::cat(&parts, 0)?)
}

fn order_digest(order: &[usize]) -> String {
    let bytes: Vec<u8> = order.iter().flat_map(|&i| (i as u64).to_le_bytes()).collect();
    sha256_hex(&bytes)
}

fn validation_metrics(
    classifier: &Classifier,
    activations: &Tensor,
    labels: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let n = labels.len();
    let mut scores = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let len = batch_size.min(n - start);
        let logits = classifier.logits_from_activations(&activations.narrow(0, start, len)?)?;
        let probs = candle_nn::ops::softmax_last_dim(&logits)?.to_dtype(DType::F64)?;
        scores.extend(probs.to_vec2::<f64>()?);
        start += len;
    }
    accuracy_and_loss(labels, &scores)
}

/// Trains the classifier's trainable parameters on the manifest's training
/// records (collected and generated), validating at each epoch end.
///
/// Frozen-prefix activations are computed once and cached, so the frozen
/// extractor is evaluated exactly once per image. Per-sample losses are
/// summed in dataset order, which makes the reported epoch loss independent
/// of the visiting order.
pub fn train(
    classifier: &mut Classifier,
    manifest: &DatasetManifest,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    config.validate()?;
    manifest.validate()?;
    if !manifest.is_split() {
        return Err(Error::Training("manifest has not been split".into()));
    }
    if manifest.labels.len() != classifier.num_classes() {
        return Err(Error::Training(format!(
            "classifier has {} outputs but the manifest declares {} classes",
            classifier.num_classes(),
            manifest.labels.len()
        )));
    }
    let (fit, val) = partition(manifest, config)?;
    let mut per_class = vec![0usize; manifest.labels.len()];
    for r in &fit {
        per_class[usize::from(r.label)] += 1;
    }
    if let Some(empty) = per_class.iter().position(|&c| c == 0) {
        return Err(Error::Training(format!(
            "class {} has no training images",
            manifest.labels.name(empty as u16).unwrap_or("?")
        )));
    }
    if val.is_empty() {
        return Err(Error::Training(
            "validation set is empty; use a holdout fraction or a non-empty test split".into(),
        ));
    }
    let test_ids: HashSet<String> = manifest.test_records().map(ImageRecord::record_id).collect();
    if let Some(leak) = fit.iter().find(|r| test_ids.contains(&r.record_id())) {
        return Err(Error::Training(format!(
            "test image {} reached the training set",
            leak.path.display()
        )));
    }

    let bs = config.batch_size;
    let rescale = config.rescale_factor;
    let started = Instant::now();
    let fit_acts = cache_activations(classifier, &fit, rescale, bs)?;
    let val_acts = cache_activations(classifier, &val, rescale, bs)?;
    log::info!(
        "cached activations for {} training and {} validation images in {:.1}s",
        fit.len(),
        val.len(),
        started.elapsed().as_secs_f64()
    );
    let fit_labels: Vec<usize> = fit.iter().map(|r| usize::from(r.label)).collect();
    let val_labels: Vec<usize> = val.iter().map(|r| usize::from(r.label)).collect();
    let device = classifier.device().clone();
    let label_tensor = Tensor::from_vec(
        fit_labels.iter().map(|&l| l as u32).collect::<Vec<u32>>(),
        fit_labels.len(),
        &device,
    )?;

    let mut optimizer = optim::HeadOptimizer::new(
        config.optimizer,
        classifier.trainable_vars(),
        config.learning_rate,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.shuffle_seed, "epoch-order"));
    let n = fit.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = TrainingHistory::default();
    let mut audit = TrainingAudit {
        train_paths: fit.iter().map(|r| r.path.clone()).collect(),
        validation_paths: val.iter().map(|r| r.path.clone()).collect(),
        epoch_order_digests: Vec::with_capacity(config.epochs),
    };

    for epoch in 1..=config.epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        audit.epoch_order_digests.push(order_digest(&order));
        let mut losses = vec![0.0_f64; n];
        let mut correct = vec![false; n];
        for chunk in order.chunks(bs) {
            let idx = Tensor::from_vec(
                chunk.iter().map(|&i| i as u32).collect::<Vec<u32>>(),
                chunk.len(),
                &device,
            )?;
            let x = fit_acts.index_select(&idx, 0)?;
            let y = label_tensor.index_select(&idx, 0)?;
            let logits = classifier.logits_from_activations(&x)?;
            let log_probs = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
            let per_sample = log_probs.gather(&y.unsqueeze(1)?, 1)?.squeeze(1)?.neg()?;
            let values = per_sample.to_dtype(DType::F64)?.to_vec1::<f64>()?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch });
            }
            let predicted = logits.argmax(D::Minus1)?.to_vec1::<u32>()?;
            for ((&i, v), p) in chunk.iter().zip(values).zip(predicted) {
                losses[i] = v;
                correct[i] = p as usize == fit_labels[i];
            }
            let loss = per_sample.mean(0)?;
            optimizer.step(&loss.backward()?)?;
        }
        let train_loss = losses.iter().sum::<f64>() / n as f64;
        let train_accuracy = correct.iter().filter(|&&c| c).count() as f64 / n as f64;
        let (val_accuracy, val_loss) = validation_metrics(classifier, &val_acts, &val_labels, bs)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        let metrics = EpochMetrics {
            epoch,
            train_accuracy,
            train_loss,
            val_accuracy,
            val_loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}/{}: train acc {train_accuracy:.4} loss {train_loss:.4}, val acc {val_accuracy:.4} loss {val_loss:.4}",
            config.epochs
        );
        history.push(metrics);
    }
    Ok(TrainingOutcome { history, audit })
}
