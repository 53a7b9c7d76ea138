//! On-disk model registry: one directory per trained artifact holding the
//! weights, a prediction fixture and `metadata.json`, written last and
//! published with a single rename.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::dataset::{preprocess_rgb, LabelSet};
use crate::error::{Error, Result};
use crate::models::{BackboneFamily, BackboneSpec, Classifier, ClassifierSummary};
use crate::training::{TrainingConfig, TrainingHistory};
use crate::util::{self, sha256_file, sha256_hex};

pub const ARTIFACT_SCHEMA_VERSION: u64 = 1;
pub const METADATA_FILE: &str = "metadata.json";
pub const WEIGHTS_FILE: &str = "weights.safetensors";
pub const FIXTURE_FILE: &str = "fixture.png";
pub const HISTORY_FILE: &str = "history.csv";
/// Per-class tolerance when replaying the stored fixture prediction.
pub const FIXTURE_TOLERANCE: f64 = 1e-5;

const STAGING_PREFIX: &str = ".tmp-";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessingContract {
    /// (height, width)
    pub input_size: (usize, usize),
    /// Pixel values are divided by this.
    pub rescale_factor: f64,
}

impl PreprocessingContract {
    pub fn apply(&self, image: &RgbImage) -> Result<crate::dataset::PixelTensor> {
        preprocess_rgb(image, self.input_size, self.rescale_factor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub train_accuracy: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionFixture {
    pub file: String,
    pub expected: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMetadata {
    pub schema_version: u64,
    pub model_id: String,
    pub family: BackboneFamily,
    pub backbone: BackboneSpec,
    /// Output index `i` decodes to `labels[i]`.
    pub labels: Vec<String>,
    pub preprocessing: PreprocessingContract,
    pub weights_file: String,
    pub weights_sha256: String,
    pub summary: ClassifierSummary,
    pub training: TrainingConfig,
    pub metrics: FinalMetrics,
    pub history: TrainingHistory,
    pub created_at: DateTime<Utc>,
    pub fixture: PredictionFixture,
}

/// Everything a save needs besides the destination.
pub struct ArtifactContents<'a> {
    pub classifier: &'a Classifier,
    pub labels: Vec<String>,
    pub training: TrainingConfig,
    pub history: TrainingHistory,
    pub metrics: FinalMetrics,
    /// Image embedded as the prediction fixture; a deterministic pattern is
    /// used when absent.
    pub fixture_image: Option<RgbImage>,
}

/// A loaded, fixture-verified model.
#[derive(Debug)]
pub struct LoadedModel {
    pub classifier: Classifier,
    pub metadata: ArtifactMetadata,
    pub labels: LabelSet,
}

impl LoadedModel {
    /// Class probabilities for one decoded RGB image.
    pub fn predict_image(&self, image: &RgbImage) -> Result<Vec<f64>> {
        let pixels = self.metadata.preprocessing.apply(image)?;
        let mut rows = self.classifier.predict(&[pixels])?;
        Ok(rows.remove(0))
    }
}

/// Ids are used as directory names and URL segments.
pub fn validate_model_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("invalid model id {id:?}")))
    }
}

fn default_fixture(size: (usize, usize)) -> RgbImage {
    let (h, w) = (size.0 as u32, size.1 as u32);
    RgbImage::from_fn(w, h, |x, y| {
        Rgb([
            ((x * 255) / w.max(1)) as u8,
            ((y * 255) / h.max(1)) as u8,
            (((x + y) * 37) % 256) as u8,
        ])
    })
}

fn fixture_prediction(classifier: &Classifier, preprocessing: &PreprocessingContract, image: &RgbImage) -> Result<Vec<f64>> {
    let pixels = preprocessing.apply(image)?;
    Ok(classifier.predict(&[pixels])?.remove(0))
}

impl ArtifactContents<'_> {
    fn validate(&self) -> Result<LabelSet> {
        if self.labels.is_empty() {
            return Err(Error::InvalidArgument("artifact is missing its label order".into()));
        }
        let labels = LabelSet::new(self.labels.iter().map(String::as_str))?;
        if labels.len() != self.classifier.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "{} labels for a {}-class classifier",
                labels.len(),
                self.classifier.num_classes()
            )));
        }
        let m = &self.metrics;
        if [m.train_accuracy, m.train_loss, m.val_accuracy, m.val_loss]
            .iter()
            .chain(m.test_accuracy.iter())
            .chain(m.test_loss.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::InvalidArgument("artifact metrics must be finite".into()));
        }
        Ok(labels)
    }
}

/// Writes a new artifact under `<registry_dir>/<model_id>/` and returns its
/// metadata. Files are staged in a hidden sibling directory and published
/// by renaming it; `metadata.json` is the last file written.
pub fn save_artifact(registry_dir: &Path, contents: &ArtifactContents<'_>) -> Result<ArtifactMetadata> {
    contents.validate()?;
    util::create_dir_all(registry_dir)?;
    let classifier = contents.classifier;
    let created_at = Utc::now();
    let preprocessing = PreprocessingContract {
        input_size: classifier.input_size(),
        rescale_factor: contents.training.rescale_factor,
    };

    let nonce = format!(
        "{}-{}",
        created_at.timestamp_nanos_opt().unwrap_or_default(),
        std::process::id()
    );
    let staging = registry_dir.join(format!("{STAGING_PREFIX}{}", sha256_hex(nonce.as_bytes())));
    util::create_dir_all(&staging)?;
    let result = stage_and_publish(registry_dir, &staging, contents, created_at, preprocessing, &nonce);
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

fn stage_and_publish(
    registry_dir: &Path,
    staging: &Path,
    contents: &ArtifactContents<'_>,
    created_at: DateTime<Utc>,
    preprocessing: PreprocessingContract,
    nonce: &str,
) -> Result<ArtifactMetadata> {
    let classifier = contents.classifier;
    let weights = staging.join(WEIGHTS_FILE);
    classifier.save_safetensors(&weights)?;
    let weights_sha256 = sha256_file(&weights)?;

    let fixture_image = contents
        .fixture_image
        .clone()
        .unwrap_or_else(|| default_fixture(preprocessing.input_size));
    let fixture_path = staging.join(FIXTURE_FILE);
    fixture_image
        .save_with_format(&fixture_path, image::ImageFormat::Png)
        .map_err(|e| Error::Model(format!("cannot write fixture: {e}")))?;
    let expected = fixture_prediction(classifier, &preprocessing, &fixture_image)?;
    contents.history.write_csv(&staging.join(HISTORY_FILE))?;

    let family = classifier.family();
    let digest = sha256_hex(format!("{weights_sha256}{nonce}").as_bytes());
    let model_id = format!(
        "{}-{}-{}",
        family.as_str(),
        created_at.format("%Y%m%dT%H%M%SZ"),
        &digest[..6]
    );
    let metadata = ArtifactMetadata {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        model_id: model_id.clone(),
        family,
        backbone: classifier.spec().clone(),
        labels: contents.labels.clone(),
        preprocessing,
        weights_file: WEIGHTS_FILE.into(),
        weights_sha256,
        summary: classifier.describe(),
        training: contents.training.clone(),
        metrics: contents.metrics,
        history: contents.history.clone(),
        created_at,
        fixture: PredictionFixture {
            file: FIXTURE_FILE.into(),
            expected,
        },
    };
    let json = serde_json::to_string_pretty(&metadata).expect("metadata serializes");
    util::write_file(&staging.join(METADATA_FILE), json.as_bytes())?;

    let target = registry_dir.join(&model_id);
    if target.exists() {
        return Err(Error::IdCollision { model_id });
    }
    fs::rename(staging, &target).map_err(|e| Error::io(&target, e))?;
    log::info!("saved model {model_id} to {}", target.display());
    Ok(metadata)
}

fn read_metadata(dir: &Path) -> Result<ArtifactMetadata> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let version = value.get("schema_version").and_then(serde_json::Value::as_u64);
    match version {
        Some(ARTIFACT_SCHEMA_VERSION) => {}
        Some(found) => {
            return Err(Error::UnsupportedSchema {
                found,
                supported: ARTIFACT_SCHEMA_VERSION,
            })
        }
        None => return Err(Error::Schema(format!("{}: missing schema_version", path.display()))),
    }
    serde_json::from_value(value).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

/// Loads an artifact, verifying the weights checksum and replaying the
/// embedded prediction fixture.
pub fn load_artifact(registry_dir: &Path, model_id: &str) -> Result<LoadedModel> {
    validate_model_id(model_id)?;
    let dir = registry_dir.join(model_id);
    if !dir.join(METADATA_FILE).is_file() {
        return Err(Error::NotFound(format!("model {model_id}")));
    }
    let metadata = read_metadata(&dir)?;
    if metadata.model_id != model_id {
        return Err(Error::Schema(format!(
            "directory {model_id} holds metadata for {}",
            metadata.model_id
        )));
    }
    let labels = LabelSet::new(metadata.labels.iter().map(String::as_str))?;
    let weights = dir.join(&metadata.weights_file);
    let actual = sha256_file(&weights)?;
    if actual != metadata.weights_sha256 {
        return Err(Error::ChecksumMismatch {
            path: weights,
            expected: metadata.weights_sha256.clone(),
            actual,
        });
    }
    let classifier = Classifier::from_safetensors(&metadata.backbone, labels.len(), &weights)?;

    let fixture_path = dir.join(&metadata.fixture.file);
    let fixture = crate::dataset::augment::load_rgb(&fixture_path)?;
    let got = fixture_prediction(&classifier, &metadata.preprocessing, &fixture)?;
    let drift = got
        .iter()
        .zip(&metadata.fixture.expected)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    if got.len() != metadata.fixture.expected.len() || drift > FIXTURE_TOLERANCE {
        return Err(Error::Model(format!(
            "model {model_id} does not reproduce its fixture prediction (max drift {drift:e})"
        )));
    }
    Ok(LoadedModel {
        classifier,
        metadata,
        labels,
    })
}

#[derive(Debug, Clone, Default)]
pub struct RegistryListing {
    /// Readable artifacts, oldest first.
    pub models: Vec<ArtifactMetadata>,
    /// Artifact directories whose metadata could not be read.
    pub unreadable: Vec<(PathBuf, String)>,
}

/// Scans `registry_dir`. Hidden entries (including interrupted saves) and
/// entries without `metadata.json` are skipped; a missing directory lists
/// as empty.
pub fn list_models(registry_dir: &Path) -> Result<RegistryListing> {
    let mut listing = RegistryListing::default();
    let entries = match fs::read_dir(registry_dir) {
        Ok(e) => e,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(listing),
        Err(e) => return Err(Error::io(registry_dir, e)),
    };
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(registry_dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        if !path.is_dir() || !path.join(METADATA_FILE).exists() {
            log::warn!("skipping foreign registry entry {}", path.display());
            continue;
        }
        match read_metadata(&path) {
            Ok(m) => listing.models.push(m),
            Err(e) => {
                log::warn!("unreadable artifact {}: {e}", path.display());
                listing.unreadable.push((path, e.to_string()));
            }
        }
    }
    listing
        .models
        .sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.model_id.cmp(&b.model_id)));
    listing.unreadable.sort();
    Ok(listing)
}

/// The most recently created readable artifact.
pub fn latest_model_id(registry_dir: &Path) -> Result<Option<String>> {
    Ok(list_models(registry_dir)?.models.pop().map(|m| m.model_id))
}
