//! Breed knowledge base: description, characteristics, cultivation steps
//! and care guidance per breed, keyed by normalized name.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::LabelSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BreedInfoRecord {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub characteristics: Vec<String>,
    #[serde(default)]
    pub cultivation_steps: Vec<String>,
    #[serde(default)]
    pub care_guidance: Vec<String>,
    #[serde(default)]
    pub sources: Vec<String>,
    /// Alternative spellings that resolve to this record.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub aliases: Vec<String>,
}

/// Lookup key: trimmed, inner whitespace collapsed, typographic apostrophes
/// folded, lowercase.
pub fn normalize_name(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .replace(['\u{2019}', '\u{2018}'], "'")
        .to_lowercase()
}

#[derive(Debug, Clone, Default)]
pub struct BreedBase {
    records: Vec<BreedInfoRecord>,
    index: HashMap<String, usize>,
}

impl BreedBase {
    pub fn from_records(records: Vec<BreedInfoRecord>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.name.trim().is_empty() {
                return Err(Error::Schema(format!("breed record {i} has an empty name")));
            }
            for key in std::iter::once(&r.name).chain(&r.aliases) {
                let norm = normalize_name(key);
                if let Some(&prev) = index.get(&norm) {
                    let prev: &BreedInfoRecord = &records[prev];
                    return Err(Error::Schema(format!(
                        "duplicate breed entry {:?} (already used by {:?})",
                        key.trim(),
                        prev.name
                    )));
                }
                index.insert(norm, i);
            }
        }
        Ok(Self { records, index })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let records: Vec<BreedInfoRecord> =
            serde_json::from_str(text).map_err(|e| Error::Schema(format!("breeds file: {e}")))?;
        Self::from_records(records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[BreedInfoRecord] {
        &self.records
    }

    /// Exact match on the normalized name or an alias.
    pub fn lookup(&self, name: &str) -> Option<&BreedInfoRecord> {
        self.index.get(&normalize_name(name)).map(|&i| &self.records[i])
    }

    /// Labels without a record, in label order.
    pub fn missing_labels(&self, labels: &LabelSet) -> Vec<String> {
        labels
            .names()
            .into_iter()
            .filter(|n| self.lookup(n).is_none())
            .collect()
    }

    /// Fails unless every label has a record.
    pub fn check_coverage(&self, labels: &LabelSet) -> Result<()> {
        let missing = self.missing_labels(labels);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Dataset(format!(
                "breed base has no record for {}",
                missing.join(", ")
            )))
        }
    }
}

pub fn load_breedbase(path: &Path) -> Result<BreedBase> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BreedBase::from_json(&text)
}
