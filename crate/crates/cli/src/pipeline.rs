//! `run --config pipeline.json`: every stage from one file.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rosebreed_core::dataset::{synthetic, AugmentationConfig, ClassCounts, DatasetManifest, DEFAULT_BREEDS};
use rosebreed_core::training::TrainingConfig;
use rosebreed_core::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::stages::{self, BackboneChoice, CompareSummary, TrainSummary};

/// Generated colored-shape corpus used in place of collected photographs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticData {
    pub per_class: usize,
    #[serde(default = "default_image_size")]
    pub image_size: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_image_size() -> u32 {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { ratio: 0.8, seed: 42 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Every output lands under this directory. Relative paths in the
    /// config resolve against the config file's directory.
    pub workdir: PathBuf,
    /// `<root>/<class>/*.{jpg,png}`; required unless `synthetic` is set.
    #[serde(default)]
    pub data_root: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticData>,
    /// Class order; directory order when absent.
    #[serde(default)]
    pub labels: Option<Vec<String>>,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    pub backbones: Vec<BackboneChoice>,
    #[serde(default)]
    pub registry_dir: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let mut config: Self = stages::read_json(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.workdir);
        if let Some(p) = config.data_root.as_mut() {
            resolve(p);
        }
        if let Some(p) = config.registry_dir.as_mut() {
            resolve(p);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_root.is_some() == self.synthetic.is_some() {
            return Err(Error::InvalidArgument(
                "set exactly one of `data_root` and `synthetic`".into(),
            ));
        }
        if self.backbones.is_empty() {
            return Err(Error::InvalidArgument("`backbones` is empty".into()));
        }
        for b in &self.backbones {
            b.spec().validate()?;
        }
        self.augmentation.validate()?;
        self.training.validate()
    }

    pub fn registry(&self) -> PathBuf {
        self.registry_dir.clone().unwrap_or_else(|| self.workdir.join("registry"))
    }
}

/// Fixed file names under the work directory.
pub mod layout {
    pub const SYNTHETIC_DIR: &str = "data";
    pub const INGESTED: &str = "manifest.ingested.json";
    pub const SPLIT: &str = "manifest.split.json";
    pub const AUGMENTED_DIR: &str = "augmented";
    pub const MANIFEST: &str = "manifest.json";
    pub const AUDIT_DIR: &str = "audit";
    pub const REPORT_DIR: &str = "report";
    pub const SUMMARY: &str = "summary.json";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCounts {
    pub labels: Vec<String>,
    pub collected: Vec<usize>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub generated: Vec<usize>,
    pub train_total: usize,
}

impl StageCounts {
    pub fn of(manifest: &DatasetManifest) -> Self {
        let c: ClassCounts = manifest.counts();
        Self {
            labels: manifest.labels.names(),
            train_total: c.train_total().iter().sum(),
            collected: c.collected,
            train: c.train_collected,
            test: c.test,
            generated: c.generated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub counts: StageCounts,
    pub models: Vec<TrainSummary>,
    pub comparison: CompareSummary,
    pub seconds: f64,
}

pub fn run_pipeline(config: &PipelineConfig, force: bool) -> Result<PipelineSummary> {
    config.validate()?;
    let started = Instant::now();
    let work = &config.workdir;
    let manifest_path = work.join(layout::MANIFEST);
    stages::prepare_output(&manifest_path, force)?;
    std::fs::create_dir_all(work).map_err(|e| Error::io(work, e))?;

    let data_root = match (&config.data_root, &config.synthetic) {
        (Some(root), _) => root.clone(),
        (None, Some(s)) => {
            let root = work.join(layout::SYNTHETIC_DIR);
            stages::prepare_output(&root, force)?;
            let names: Vec<&str> = match &config.labels {
                Some(l) => l.iter().map(String::as_str).collect(),
                None => DEFAULT_BREEDS.to_vec(),
            };
            log::info!("writing {} synthetic images per class", s.per_class);
            synthetic::write_shape_corpus(&root, &names, s.per_class, s.image_size, s.seed)?;
            root
        }
        (None, None) => unreachable!("validated"),
    };

    let ingested = stages::ingest(&data_root, config.labels.clone(), false)?;
    stages::save_manifest(&ingested, &work.join(layout::INGESTED), force)?;
    let split = stages::split(&ingested, config.split.ratio, config.split.seed)?;
    stages::save_manifest(&split, &work.join(layout::SPLIT), force)?;
    let manifest = stages::augment(&split, &config.augmentation, &work.join(layout::AUGMENTED_DIR), force)?;
    stages::save_manifest(&manifest, &manifest_path, force)?;
    let counts = StageCounts::of(&manifest);
    log::info!("grand training total {}", counts.train_total);

    let registry = config.registry();
    let audit_dir = work.join(layout::AUDIT_DIR);
    stages::prepare_output(&audit_dir, force)?;
    let mut models = Vec::new();
    for choice in &config.backbones {
        let summary = stages::train_backbone(&manifest, choice, &config.training, &registry)?;
        stages::write_json(&summary.audit, &audit_dir.join(format!("{}.json", choice.family)))?;
        models.push(summary);
    }

    let ids: Vec<String> = models.iter().map(|m| m.model_id.clone()).collect();
    let comparison = stages::compare(&registry, &ids, Some(&manifest), &work.join(layout::REPORT_DIR), force)?;
    let summary = PipelineSummary {
        counts,
        models,
        comparison,
        seconds: started.elapsed().as_secs_f64(),
    };
    let summary_path = work.join(layout::SUMMARY);
    stages::prepare_output(&summary_path, force)?;
    stages::write_json(&summary, &summary_path)?;
    Ok(summary)
}
