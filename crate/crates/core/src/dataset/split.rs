use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, Provenance, Split};
use crate::error::{Error, Result};
use crate::util::round_half_up;

#[derive(Debug, Clone, Copy)]
pub struct SplitOptions {
    pub ratio: f64,
    pub seed: u64,
    pub allow_empty_test: bool,
}

impl SplitOptions {
    pub fn new(ratio: f64, seed: u64) -> Self {
        Self {
            ratio,
            seed,
            allow_empty_test: false,
        }
    }
}

/// Number of training images for a class of `n` collected images:
/// `round_half_up(ratio * n)`.
pub fn train_count(ratio: f64, n: usize) -> usize {
    round_half_up(ratio * n as f64).min(n)
}

/// Stratified split: each class is shuffled with a generator seeded once
/// from `seed` and its first `train_count` records go to train.
pub fn split_dataset(manifest: &DatasetManifest, options: &SplitOptions) -> Result<DatasetManifest> {
    let ratio = options.ratio;
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "split ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if let Some(r) = manifest
        .records
        .iter()
        .find(|r| r.provenance != Provenance::Collected)
    {
        return Err(Error::Dataset(format!(
            "cannot split a manifest containing generated record {}",
            r.path.display()
        )));
    }

    let mut out = manifest.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut summary = Vec::with_capacity(manifest.labels.len());
    for label in manifest.labels.iter() {
        let mut members: Vec<usize> = out
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label.id)
            .map(|(i, _)| i)
            .collect();
        let n = members.len();
        let n_train = train_count(ratio, n);
        if n_train == 0 {
            return Err(Error::Dataset(format!(
                "class `{}` would have an empty train partition ({n} images at ratio {ratio})",
                label.name
            )));
        }
        if n_train == n && !options.allow_empty_test {
            return Err(Error::Dataset(format!(
                "class `{}` would have an empty test partition ({n} images at ratio {ratio})",
                label.name
            )));
        }
        members.shuffle(&mut rng);
        for (rank, &idx) in members.iter().enumerate() {
            out.records[idx].split = Some(if rank < n_train {
                Split::Train
            } else {
                Split::Test
            });
        }
        summary.push(format!("{}={}/{}", label.name, n_train, n - n_train));
    }
    out.split_seed = Some(options.seed);
    out.split_ratio = Some(ratio);
    out.push_audit(
        "split",
        format!("ratio {ratio} seed {} train/test {}", options.seed, summary.join(", ")),
    );
    Ok(out)
}
