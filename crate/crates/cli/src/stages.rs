//! One function per pipeline stage, shared by the subcommands and `run`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rosebreed_core::dataset::{
    augment_training_set, ingest_dataset, read_manifest, split_dataset, write_manifest,
    AugmentationConfig, DatasetManifest, ImageRecord, IngestOptions, SplitOptions,
};
use rosebreed_core::evaluation::{
    evaluate_scores, render_report, ComparisonReport, ComparisonRow, EvaluationReport, TestMetrics,
};
use rosebreed_core::models::{build_classifier, BackboneFamily, BackboneSpec, Classifier, WeightInit};
use rosebreed_core::registry::{
    latest_model_id, list_models, load_artifact, save_artifact, ArtifactContents, ArtifactMetadata,
    FinalMetrics,
};
use rosebreed_core::training::{evaluate_epoch, train, TrainingAudit, TrainingConfig};
use rosebreed_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Fails unless `path` is absent or `force` is set. With `force`, an
/// existing directory is removed so the stage starts clean.
pub fn prepare_output(path: &Path, force: bool) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    if !force {
        return Err(Error::InvalidArgument(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    if path.is_dir() {
        fs::remove_dir_all(path).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Schema(format!("cannot serialize {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path, force: bool) -> Result<()> {
    prepare_output(path, force)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_manifest(manifest, path)
}

pub fn ingest(root: &Path, labels: Option<Vec<String>>, skip_undecodable: bool) -> Result<DatasetManifest> {
    ingest_dataset(
        root,
        &IngestOptions {
            labels,
            skip_undecodable,
        },
    )
}

pub fn split(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<DatasetManifest> {
    split_dataset(manifest, &SplitOptions::new(ratio, seed))
}

pub fn augment(manifest: &DatasetManifest, config: &AugmentationConfig, out_dir: &Path, force: bool) -> Result<DatasetManifest> {
    prepare_output(out_dir, force)?;
    augment_training_set(manifest, config, out_dir)
}

/// Which backbone to train and how to initialise it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneChoice {
    pub family: BackboneFamily,
    /// (height, width); the family default when absent.
    #[serde(default)]
    pub input_size: Option<(usize, usize)>,
    /// Seeded random initialization instead of cached pretrained weights.
    #[serde(default)]
    pub random_init_seed: Option<u64>,
    #[serde(default = "default_true")]
    pub freeze_extractor: bool,
    #[serde(default)]
    pub fine_tune_top: usize,
}

fn default_true() -> bool {
    true
}

impl BackboneChoice {
    pub fn new(family: BackboneFamily) -> Self {
        Self {
            family,
            input_size: None,
            random_init_seed: None,
            freeze_extractor: true,
            fine_tune_top: 0,
        }
    }

    pub fn spec(&self) -> BackboneSpec {
        let mut spec = BackboneSpec::new(self.family);
        if let Some(size) = self.input_size {
            spec.input_size = size;
        }
        if let Some(seed) = self.random_init_seed {
            spec.init = WeightInit::Random { seed };
        }
        spec.freeze_extractor = self.freeze_extractor;
        spec.fine_tune_top = self.fine_tune_top;
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model_id: String,
    pub family: BackboneFamily,
    pub metrics: FinalMetrics,
    pub seconds: f64,
    pub audit: TrainingAudit,
}

fn first_test_image(manifest: &DatasetManifest) -> Option<image::RgbImage> {
    let record = manifest.test_records().next()?;
    image::open(&record.path).ok().map(|i| i.to_rgb8())
}

fn test_records(manifest: &DatasetManifest) -> Result<Vec<&ImageRecord>> {
    let records: Vec<&ImageRecord> = manifest.test_records().collect();
    if records.is_empty() {
        return Err(Error::Dataset("manifest has no test records".into()));
    }
    Ok(records)
}

/// Trains one backbone, scores the test split and saves the artifact.
pub fn train_backbone(
    manifest: &DatasetManifest,
    choice: &BackboneChoice,
    config: &TrainingConfig,
    registry_dir: &Path,
) -> Result<TrainSummary> {
    let started = Instant::now();
    let mut classifier: Classifier = build_classifier(&choice.spec(), manifest.labels.len())?;
    log::info!("training {} on {} records", choice.family, manifest.records.len());
    let outcome = train(&mut classifier, manifest, config)?;
    let last = outcome
        .history
        .last()
        .ok_or_else(|| Error::Training("training produced no epochs".into()))?;
    let test = evaluate_epoch(&classifier, &test_records(manifest)?, config.rescale_factor, config.batch_size)?;
    let metrics = FinalMetrics {
        train_accuracy: last.train_accuracy,
        train_loss: last.train_loss,
        val_accuracy: last.val_accuracy,
        val_loss: last.val_loss,
        test_accuracy: Some(test.accuracy),
        test_loss: Some(test.loss),
    };
    let meta = save_artifact(
        registry_dir,
        &ArtifactContents {
            classifier: &classifier,
            labels: manifest.labels.names(),
            training: config.clone(),
            history: outcome.history,
            metrics,
            fixture_image: first_test_image(manifest),
        },
    )?;
    Ok(TrainSummary {
        model_id: meta.model_id,
        family: choice.family,
        metrics,
        seconds: started.elapsed().as_secs_f64(),
        audit: outcome.audit,
    })
}

/// `latest` resolves to the newest artifact.
pub fn resolve_model_id(registry_dir: &Path, id: &str) -> Result<String> {
    if id == "latest" {
        latest_model_id(registry_dir)?
            .ok_or_else(|| Error::NotFound(format!("no model in {}", registry_dir.display())))
    } else {
        Ok(id.to_string())
    }
}

fn report_name(meta: &ArtifactMetadata, all: &[ArtifactMetadata]) -> String {
    let family = meta.family.display_name().to_string();
    if all.iter().filter(|m| m.family == meta.family).count() > 1 {
        format!("{family} ({})", meta.model_id)
    } else {
        family
    }
}

/// Scores the test split of `manifest` with a registered model.
pub fn evaluate_model(registry_dir: &Path, model_id: &str, manifest: &DatasetManifest) -> Result<(ArtifactMetadata, EvaluationReport)> {
    let loaded = load_artifact(registry_dir, model_id)?;
    if loaded.metadata.labels != manifest.labels.names() {
        return Err(Error::Dataset(format!(
            "model labels {:?} differ from manifest labels {:?}",
            loaded.metadata.labels,
            manifest.labels.names()
        )));
    }
    let scored = evaluate_epoch(
        &loaded.classifier,
        &test_records(manifest)?,
        loaded.metadata.preprocessing.rescale_factor,
        loaded.metadata.training.batch_size,
    )?;
    let name = loaded.metadata.family.display_name();
    let report = evaluate_scores(name, &manifest.labels, &scored.labels, &scored.scores)?;
    Ok((loaded.metadata, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub best: String,
    pub rows: Vec<ComparisonRow>,
    pub files: Vec<PathBuf>,
}

/// Builds the comparison table for `model_ids`. With a manifest every model
/// is re-scored on its test split and full evaluation reports are rendered;
/// without one the test metrics stored in each artifact are used.
pub fn compare(
    registry_dir: &Path,
    model_ids: &[String],
    manifest: Option<&DatasetManifest>,
    out_dir: &Path,
    force: bool,
) -> Result<CompareSummary> {
    if model_ids.is_empty() {
        return Err(Error::InvalidArgument("no models to compare".into()));
    }
    prepare_output(out_dir, force)?;
    let listing = list_models(registry_dir)?;
    let mut metas = Vec::new();
    for id in model_ids {
        let meta = listing
            .models
            .iter()
            .find(|m| &m.model_id == id)
            .ok_or_else(|| Error::NotFound(id.clone()))?;
        metas.push(meta.clone());
    }

    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for meta in &metas {
        let last = meta
            .history
            .last()
            .ok_or_else(|| Error::Dataset(format!("{} has an empty history", meta.model_id)))?;
        let name = report_name(meta, &metas);
        let test = match manifest {
            Some(m) => {
                let (_, mut report) = evaluate_model(registry_dir, &meta.model_id, m)?;
                report.model = name.clone();
                let t = TestMetrics {
                    accuracy: report.accuracy,
                    loss: report.loss,
                };
                reports.push(report);
                t
            }
            None => match (meta.metrics.test_accuracy, meta.metrics.test_loss) {
                (Some(accuracy), Some(loss)) => TestMetrics { accuracy, loss },
                _ => {
                    return Err(Error::Dataset(format!(
                        "{} stores no test metrics; pass --manifest to score it",
                        meta.model_id
                    )))
                }
            },
        };
        rows.push(ComparisonRow::new(name, last.train_accuracy, last.train_loss, test));
    }
    let report = ComparisonReport::from_rows(rows)?;
    let files = render_report(&report, &reports, out_dir)?;
    Ok(CompareSummary {
        best: report.best_row().model.clone(),
        rows: report.rows.clone(),
        files,
    })
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    read_manifest(path)
}
