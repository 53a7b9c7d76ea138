use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five breeds photographed for the reference corpus, in the order the
/// training-set distribution table lists them.
pub const DEFAULT_BREEDS: [&str; 5] = [
    "Papa Meilland",
    "Iceberg",
    "Kings Ransom",
    "Queen Elizabeth",
    "Bengali",
];

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BreedLabel {
    pub id: u16,
    pub name: String,
}

impl fmt::Display for BreedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Ordered label set. Ids are contiguous from zero and names are unique
/// under case-insensitive comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BreedLabel>", into = "Vec<BreedLabel>")]
pub struct LabelSet {
    labels: Vec<BreedLabel>,
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<BreedLabel> = names
            .into_iter()
            .enumerate()
            .map(|(i, name)| BreedLabel {
                id: i as u16,
                name: name.into(),
            })
            .collect();
        Self::try_from(labels)
    }

    pub fn default_breeds() -> Self {
        Self::new(DEFAULT_BREEDS).expect("default breed list is valid")
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, id: u16) -> Option<&BreedLabel> {
        self.labels.get(usize::from(id))
    }

    pub fn name(&self, id: u16) -> Option<&str> {
        self.get(id).map(|l| l.name.as_str())
    }

    /// Exact-name lookup.
    pub fn id_of(&self, name: &str) -> Option<u16> {
        self.labels.iter().find(|l| l.name == name).map(|l| l.id)
    }

    pub fn names(&self) -> Vec<String> {
        self.labels.iter().map(|l| l.name.clone()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BreedLabel> {
        self.labels.iter()
    }
}

impl TryFrom<Vec<BreedLabel>> for LabelSet {
    type Error = Error;

    fn try_from(labels: Vec<BreedLabel>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::Dataset(format!(
                "fewer than 2 classes (got {})",
                labels.len()
            )));
        }
        if labels.len() > usize::from(u16::MAX) {
            return Err(Error::Dataset("too many classes".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for (i, label) in labels.iter().enumerate() {
            if usize::from(label.id) != i {
                return Err(Error::Dataset(format!(
                    "label ids must be contiguous from 0; `{}` has id {} at position {i}",
                    label.name, label.id
                )));
            }
            let name = label.name.trim();
            if name.is_empty() {
                return Err(Error::Dataset(format!("label {i} has an empty name")));
            }
            if !seen.insert(name.to_lowercase()) {
                return Err(Error::Dataset(format!(
                    "duplicate class name `{}`",
                    label.name
                )));
            }
        }
        Ok(Self { labels })
    }
}

impl From<LabelSet> for Vec<BreedLabel> {
    fn from(set: LabelSet) -> Self {
        set.labels
    }
}
