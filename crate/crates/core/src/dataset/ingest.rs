use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::labels::LabelSet;
use super::manifest::{DatasetManifest, ImageRecord};
use crate::error::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 3] = ["jpg", "jpeg", "png"];

#[derive(Debug, Clone, Default)]
pub struct IngestOptions {
    /// Class order to use. Directory names must match this set exactly.
    pub labels: Option<Vec<String>>,
    /// Record undecodable files in the audit log instead of failing.
    pub skip_undecodable: bool,
}

pub(crate) fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        .unwrap_or(false)
}

fn list_class_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        dirs.push((name, path));
    }
    dirs.sort();
    Ok(dirs)
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image_file(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn check_decodable(path: &Path) -> std::result::Result<(), String> {
    let reader = image::ImageReader::open(path)
        .map_err(|e| e.to_string())?
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    let img = reader.decode().map_err(|e| e.to_string())?;
    if img.width() == 0 || img.height() == 0 {
        return Err("zero-area image".into());
    }
    Ok(())
}

/// Builds a manifest of collected images from a `<root>/<class>/*.{jpg,png}`
/// layout. Split is left unassigned.
pub fn ingest_dataset(root: &Path, options: &IngestOptions) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} does not exist or is not a directory",
            root.display()
        )));
    }
    let dirs = list_class_dirs(root)?;

    let mut folded: HashMap<String, &str> = HashMap::new();
    for (name, _) in &dirs {
        if let Some(other) = folded.insert(name.to_lowercase(), name) {
            return Err(Error::Dataset(format!(
                "duplicate class name: `{other}` and `{name}`"
            )));
        }
    }

    let ordered: Vec<(String, PathBuf)> = match &options.labels {
        None => dirs,
        Some(wanted) => {
            let labels = LabelSet::new(wanted.iter().cloned())?;
            let mut by_name: HashMap<String, PathBuf> = dirs.into_iter().collect();
            let mut ordered = Vec::with_capacity(labels.len());
            for label in labels.iter() {
                let path = by_name.remove(&label.name).ok_or_else(|| {
                    Error::Dataset(format!(
                        "class `{}` has no subdirectory under {}",
                        label.name,
                        root.display()
                    ))
                })?;
                ordered.push((label.name.clone(), path));
            }
            if let Some(extra) = by_name.keys().min() {
                return Err(Error::Dataset(format!(
                    "subdirectory `{extra}` is not in the requested label set"
                )));
            }
            ordered
        }
    };

    let labels = LabelSet::new(ordered.iter().map(|(n, _)| n.clone()))?;

    let mut candidates = Vec::new();
    for (id, (name, dir)) in ordered.iter().enumerate() {
        let files = list_images(dir)?;
        if files.is_empty() {
            return Err(Error::Dataset(format!(
                "class directory `{name}` contains no images"
            )));
        }
        candidates.extend(files.into_iter().map(|p| (p, id as u16)));
    }

    let checks: Vec<std::result::Result<(), String>> =
        candidates.par_iter().map(|(p, _)| check_decodable(p)).collect();

    let mut records = Vec::with_capacity(candidates.len());
    let mut skipped = Vec::new();
    for ((path, label), check) in candidates.into_iter().zip(checks) {
        match check {
            Ok(()) => records.push(ImageRecord::collected(path, label)),
            Err(reason) if options.skip_undecodable => skipped.push((path, reason)),
            Err(reason) => return Err(Error::Decode { path, reason }),
        }
    }

    for label in labels.iter() {
        if !records.iter().any(|r| r.label == label.id) {
            return Err(Error::Dataset(format!(
                "class `{}` has no decodable images",
                label.name
            )));
        }
    }

    let mut manifest = DatasetManifest::new(labels, records);
    manifest.push_audit(
        "ingest",
        format!(
            "{} collected images in {} classes from {}",
            manifest.records.len(),
            manifest.labels.len(),
            root.display()
        ),
    );
    for (path, reason) in skipped {
        log::warn!("skipping undecodable image {}: {reason}", path.display());
        manifest.push_audit("ingest", format!("skipped {}: {reason}", path.display()));
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synthetic::write_placeholder_corpus;

    #[test]
    fn one_class_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_placeholder_corpus(dir.path(), &["a"], &[3], 8).unwrap();
        let err = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("fewer than 2 classes"), "{err}");
    }

    #[test]
    fn minimal_corpus() {
        let dir = tempfile::tempdir().unwrap();
        write_placeholder_corpus(dir.path(), &["b", "a"], &[3, 3], 8).unwrap();
        let m = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap();
        assert_eq!(m.records.len(), 6);
        assert_eq!(m.labels.names(), vec!["a", "b"]);
        let ids: std::collections::BTreeSet<u16> = m.records.iter().map(|r| r.label).collect();
        assert_eq!(ids.into_iter().collect::<Vec<_>>(), vec![0, 1]);
        assert!(m.records.iter().all(|r| r.split.is_none()));
    }

    #[test]
    fn label_argument_sets_order_and_must_match() {
        let dir = tempfile::tempdir().unwrap();
        write_placeholder_corpus(dir.path(), &["x", "y"], &[2, 2], 8).unwrap();
        let opts = IngestOptions {
            labels: Some(vec!["y".into(), "x".into()]),
            ..Default::default()
        };
        let m = ingest_dataset(dir.path(), &opts).unwrap();
        assert_eq!(m.labels.names(), vec!["y", "x"]);

        let opts = IngestOptions {
            labels: Some(vec!["y".into(), "z".into()]),
            ..Default::default()
        };
        assert!(ingest_dataset(dir.path(), &opts).is_err());
    }

    #[test]
    fn missing_root_and_empty_class() {
        assert!(ingest_dataset(Path::new("/nonexistent/rose"), &IngestOptions::default()).is_err());
        let dir = tempfile::tempdir().unwrap();
        write_placeholder_corpus(dir.path(), &["a"], &[2], 8).unwrap();
        fs::create_dir(dir.path().join("b")).unwrap();
        let err = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("no images"), "{err}");
    }

    #[test]
    fn undecodable_files_fail_or_are_skipped_explicitly() {
        let dir = tempfile::tempdir().unwrap();
        write_placeholder_corpus(dir.path(), &["a", "b"], &[2, 2], 8).unwrap();
        let bad = dir.path().join("a").join("broken.png");
        fs::write(&bad, b"not a png").unwrap();

        let err = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap_err();
        match err {
            Error::Decode { path, .. } => assert_eq!(path, bad),
            other => panic!("unexpected {other}"),
        }

        let opts = IngestOptions {
            skip_undecodable: true,
            ..Default::default()
        };
        let m = ingest_dataset(dir.path(), &opts).unwrap();
        assert_eq!(m.records.len(), 4);
        assert!(m.audit.iter().any(|a| a.detail.contains("broken.png")));
    }

    #[test]
    fn case_colliding_directories_are_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        write_placeholder_corpus(dir.path(), &["Iceberg", "iceberg"], &[1, 1], 8).unwrap();
        let err = ingest_dataset(dir.path(), &IngestOptions::default()).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}
