//! Corpus ingestion, stratified splitting, augmentation and preprocessing.

pub mod augment;
pub mod ingest;
pub mod labels;
pub mod manifest;
pub mod preprocess;
pub mod split;
pub mod synthetic;

pub use augment::{apply_transforms, augment_training_set, AugmentationConfig, TransformOp};
pub use ingest::{ingest_dataset, IngestOptions};
pub use labels::{BreedLabel, LabelSet, DEFAULT_BREEDS};
pub use manifest::{
    read_manifest, write_manifest, AuditEntry, ClassCounts, DatasetManifest, ImageRecord,
    Provenance, Split, MANIFEST_SCHEMA_VERSION,
};
pub use preprocess::{load_preprocessed, preprocess_image, preprocess_rgb, resize_bilinear, ColorPolicy, PixelTensor};
pub use split::{split_dataset, train_count, SplitOptions};
