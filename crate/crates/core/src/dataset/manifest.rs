use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::augment::TransformOp;
use super::labels::LabelSet;
use crate::error::{Error, Result};
use crate::util;

pub const MANIFEST_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Collected,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub path: PathBuf,
    /// Index into the manifest's label set.
    pub label: u16,
    pub split: Option<Split>,
    pub provenance: Provenance,
    /// Path of the collected record a generated image was derived from.
    pub source_id: Option<String>,
    #[serde(default)]
    pub transform_log: Vec<TransformOp>,
}

impl ImageRecord {
    pub fn collected(path: PathBuf, label: u16) -> Self {
        Self {
            path,
            label,
            split: None,
            provenance: Provenance::Collected,
            source_id: None,
            transform_log: Vec::new(),
        }
    }

    /// Stable identifier other records use to reference this one.
    pub fn record_id(&self) -> String {
        self.path.to_string_lossy().into_owned()
    }

    pub fn is_train(&self) -> bool {
        self.split == Some(Split::Train)
    }

    pub fn is_test(&self) -> bool {
        self.split == Some(Split::Test)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub stage: String,
    pub detail: String,
}

/// Per-class tallies, indexed by label id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ClassCounts {
    pub collected: Vec<usize>,
    pub train_collected: Vec<usize>,
    pub test: Vec<usize>,
    pub generated: Vec<usize>,
}

impl ClassCounts {
    /// Collected plus generated training images per class.
    pub fn train_total(&self) -> Vec<usize> {
        self.train_collected
            .iter()
            .zip(&self.generated)
            .map(|(c, g)| c + g)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u64,
    pub labels: LabelSet,
    pub split_seed: Option<u64>,
    pub split_ratio: Option<f64>,
    pub records: Vec<ImageRecord>,
    #[serde(default)]
    pub audit: Vec<AuditEntry>,
}

impl DatasetManifest {
    pub fn new(labels: LabelSet, records: Vec<ImageRecord>) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            labels,
            split_seed: None,
            split_ratio: None,
            records,
            audit: Vec::new(),
        }
    }

    pub fn push_audit(&mut self, stage: &str, detail: impl Into<String>) {
        self.audit.push(AuditEntry {
            stage: stage.to_string(),
            detail: detail.into(),
        });
    }

    pub fn counts(&self) -> ClassCounts {
        let k = self.labels.len();
        let mut counts = ClassCounts {
            collected: vec![0; k],
            train_collected: vec![0; k],
            test: vec![0; k],
            generated: vec![0; k],
        };
        for r in &self.records {
            let c = usize::from(r.label);
            if c >= k {
                continue;
            }
            match r.provenance {
                Provenance::Collected => {
                    counts.collected[c] += 1;
                    match r.split {
                        Some(Split::Train) => counts.train_collected[c] += 1,
                        Some(Split::Test) => counts.test[c] += 1,
                        None => {}
                    }
                }
                Provenance::Generated => counts.generated[c] += 1,
            }
        }
        counts
    }

    pub fn train_records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.is_train())
    }

    pub fn test_records(&self) -> impl Iterator<Item = &ImageRecord> {
        self.records.iter().filter(|r| r.is_test())
    }

    pub fn is_split(&self) -> bool {
        self.records.iter().all(|r| r.split.is_some())
    }

    pub fn has_generated(&self) -> bool {
        self.records
            .iter()
            .any(|r| r.provenance == Provenance::Generated)
    }

    /// Checks the structural invariants that hold at every pipeline stage.
    pub fn validate(&self) -> Result<()> {
        let k = self.labels.len();
        let mut train_collected = HashSet::new();
        let mut paths = HashSet::new();
        for r in &self.records {
            if usize::from(r.label) >= k {
                return Err(Error::Schema(format!(
                    "record {} has label {} outside the {k}-class label set",
                    r.path.display(),
                    r.label
                )));
            }
            if !paths.insert(r.path.clone()) {
                return Err(Error::Schema(format!(
                    "duplicate record path {}",
                    r.path.display()
                )));
            }
            if r.provenance == Provenance::Collected && r.is_train() {
                train_collected.insert(r.record_id());
            }
        }
        for r in &self.records {
            if r.provenance != Provenance::Generated {
                continue;
            }
            if !r.is_train() {
                return Err(Error::Schema(format!(
                    "generated record {} is not in the train split",
                    r.path.display()
                )));
            }
            match &r.source_id {
                Some(src) if train_collected.contains(src) => {}
                Some(src) => {
                    return Err(Error::Schema(format!(
                        "generated record {} references {src}, which is not a collected training record",
                        r.path.display()
                    )))
                }
                None => {
                    return Err(Error::Schema(format!(
                        "generated record {} has no source_id",
                        r.path.display()
                    )))
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("malformed manifest: {e}")))?;
        let version = value
            .get("schema_version")
            .ok_or_else(|| Error::Schema("missing field `schema_version`".into()))?
            .as_u64()
            .ok_or_else(|| Error::Schema("`schema_version` must be an unsigned integer".into()))?;
        if version != MANIFEST_SCHEMA_VERSION {
            return Err(Error::UnsupportedSchema {
                found: version,
                supported: MANIFEST_SCHEMA_VERSION,
            });
        }
        let manifest: DatasetManifest =
            serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    let mut text = manifest.to_json()?;
    text.push('\n');
    util::write_file(path, text.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DatasetManifest::from_json(&text)
}
