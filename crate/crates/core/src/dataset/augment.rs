use std::collections::HashSet;
use std::path::{Path, PathBuf};

use image::{imageops, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ImageRecord, Provenance, Split};
use crate::error::{Error, Result};
use crate::util;

/// Generation settings for the training side. Rescaling is a normalization
/// applied to every image at preprocessing time; the count-multiplying
/// generators sample flips, shear and zoom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationConfig {
    /// Pixel values are divided by this before entering a network.
    pub rescale_factor: f64,
    pub horizontal_flip: bool,
    pub vertical_flip: bool,
    /// Horizontal shear factor is drawn from `[-shear_range, shear_range]`.
    /// Valid range `[0, 1]`.
    pub shear_range: f64,
    /// Per-axis zoom is drawn from `[1 - zoom_range, 1 + zoom_range]`.
    /// Valid range `[0, 1)`.
    pub zoom_range: f64,
    /// Generated images per collected training image.
    pub multiplier: u32,
    pub rng_seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self {
            rescale_factor: 255.0,
            horizontal_flip: true,
            vertical_flip: true,
            shear_range: 0.2,
            zoom_range: 0.2,
            multiplier: 5,
            rng_seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// The evaluation-side configuration: rescale only.
    pub fn test_side(&self) -> Self {
        Self {
            rescale_factor: self.rescale_factor,
            horizontal_flip: false,
            vertical_flip: false,
            shear_range: 0.0,
            zoom_range: 0.0,
            multiplier: 0,
            rng_seed: self.rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rescale_factor.is_finite() && self.rescale_factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "rescale_factor must be positive, got {}",
                self.rescale_factor
            )));
        }
        if !(0.0..=1.0).contains(&self.shear_range) {
            return Err(Error::InvalidArgument(format!(
                "shear_range must lie in [0, 1], got {}",
                self.shear_range
            )));
        }
        if !(0.0..1.0).contains(&self.zoom_range) {
            return Err(Error::InvalidArgument(format!(
                "zoom_range must lie in [0, 1), got {}",
                self.zoom_range
            )));
        }
        if self.multiplier > 1000 {
            return Err(Error::InvalidArgument(format!(
                "multiplier {} exceeds 1000",
                self.multiplier
            )));
        }
        Ok(())
    }
}

/// One logged step of a generated image's derivation, in application order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum TransformOp {
    FlipHorizontal,
    FlipVertical,
    /// Centered affine warp: source `x = cx + zoom_x * (dx + shear * dy)`,
    /// `y = cy + zoom_y * dy`, bilinear sampling with edge clamping.
    Affine { shear: f64, zoom_x: f64, zoom_y: f64 },
}

pub fn sample_transforms<R: Rng>(config: &AugmentationConfig, rng: &mut R) -> Vec<TransformOp> {
    let mut ops = Vec::new();
    if config.shear_range > 0.0 || config.zoom_range > 0.0 {
        let shear = if config.shear_range > 0.0 {
            rng.random_range(-config.shear_range..=config.shear_range)
        } else {
            0.0
        };
        let (zoom_x, zoom_y) = if config.zoom_range > 0.0 {
            let lo = 1.0 - config.zoom_range;
            let hi = 1.0 + config.zoom_range;
            (rng.random_range(lo..=hi), rng.random_range(lo..=hi))
        } else {
            (1.0, 1.0)
        };
        ops.push(TransformOp::Affine {
            shear,
            zoom_x,
            zoom_y,
        });
    }
    if config.horizontal_flip && rng.random_bool(0.5) {
        ops.push(TransformOp::FlipHorizontal);
    }
    if config.vertical_flip && rng.random_bool(0.5) {
        ops.push(TransformOp::FlipVertical);
    }
    ops
}

fn warp_affine(src: &RgbImage, shear: f64, zoom_x: f64, zoom_y: f64) -> RgbImage {
    let (w, h) = src.dimensions();
    let cx = (f64::from(w) - 1.0) / 2.0;
    let cy = (f64::from(h) - 1.0) / 2.0;
    let max_x = f64::from(w) - 1.0;
    let max_y = f64::from(h) - 1.0;
    RgbImage::from_fn(w, h, |x, y| {
        let dx = f64::from(x) - cx;
        let dy = f64::from(y) - cy;
        let sx = (cx + zoom_x * (dx + shear * dy)).clamp(0.0, max_x);
        let sy = (cy + zoom_y * dy).clamp(0.0, max_y);
        let x0 = sx.floor();
        let y0 = sy.floor();
        let fx = sx - x0;
        let fy = sy - y0;
        let x0 = x0 as u32;
        let y0 = y0 as u32;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let p00 = src.get_pixel(x0, y0);
        let p10 = src.get_pixel(x1, y0);
        let p01 = src.get_pixel(x0, y1);
        let p11 = src.get_pixel(x1, y1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            out[c] = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Re-applies a transform log to a source image.
pub fn apply_transforms(src: &RgbImage, ops: &[TransformOp]) -> RgbImage {
    ops.iter().fold(src.clone(), |img, op| match *op {
        TransformOp::FlipHorizontal => imageops::flip_horizontal(&img),
        TransformOp::FlipVertical => imageops::flip_vertical(&img),
        TransformOp::Affine {
            shear,
            zoom_x,
            zoom_y,
        } => warp_affine(&img, shear, zoom_x, zoom_y),
    })
}

pub(crate) fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    Ok(img.to_rgb8())
}

struct GenerationJob {
    source: PathBuf,
    target: PathBuf,
    record: ImageRecord,
}

/// Writes `multiplier` generated images per collected training record under
/// `<out_dir>/<class>/gen_<stem>_<k>.png` and appends them to the manifest.
pub fn augment_training_set(
    manifest: &DatasetManifest,
    config: &AugmentationConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    config.validate()?;
    if !manifest.is_split() {
        return Err(Error::Dataset(
            "manifest has records without a split; run the split step first".into(),
        ));
    }
    if manifest.has_generated() {
        return Err(Error::Dataset("manifest already contains generated records".into()));
    }

    let mut out = manifest.clone();
    if config.multiplier == 0 {
        out.push_audit("augment", "multiplier 0: no images generated");
        return Ok(out);
    }

    let mut jobs = Vec::new();
    let mut targets = HashSet::new();
    for record in manifest.train_records() {
        let class = manifest
            .labels
            .name(record.label)
            .expect("validated label id");
        let stem = record
            .path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let source_id = record.record_id();
        let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(config.rng_seed, &source_id));
        for k in 0..config.multiplier {
            let target = out_dir.join(class).join(format!("gen_{stem}_{k}.png"));
            if !targets.insert(target.clone()) {
                return Err(Error::Dataset(format!(
                    "two training images in `{class}` share the stem `{stem}`; generated names would collide"
                )));
            }
            let ops = sample_transforms(config, &mut rng);
            jobs.push(GenerationJob {
                source: record.path.clone(),
                target: target.clone(),
                record: ImageRecord {
                    path: target,
                    label: record.label,
                    split: Some(Split::Train),
                    provenance: Provenance::Generated,
                    source_id: Some(source_id.clone()),
                    transform_log: ops,
                },
            });
        }
    }

    for label in manifest.labels.iter() {
        util::create_dir_all(&out_dir.join(&label.name))?;
    }

    jobs.par_chunks(config.multiplier as usize)
        .try_for_each(|group| -> Result<()> {
            let src = load_rgb(&group[0].source)?;
            for job in group {
                let img = apply_transforms(&src, &job.record.transform_log);
                img.save_with_format(&job.target, image::ImageFormat::Png)
                    .map_err(|e| match e {
                        image::ImageError::IoError(io) => Error::io(&job.target, io),
                        other => Error::Model(format!(
                            "cannot encode {}: {other}",
                            job.target.display()
                        )),
                    })?;
            }
            Ok(())
        })?;

    let generated = jobs.len();
    out.records.extend(jobs.into_iter().map(|j| j.record));
    let counts = out.counts();
    out.push_audit(
        "augment",
        format!(
            "multiplier {} seed {}: {generated} generated, training total {}",
            config.multiplier,
            config.rng_seed,
            counts.train_total().iter().sum::<usize>()
        ),
    );
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::labels::LabelSet;

    fn gradient(w: u32, h: u32) -> RgbImage {
        RgbImage::from_fn(w, h, |x, y| Rgb([(x * 20) as u8, (y * 30) as u8, ((x + y) * 7) as u8]))
    }

    #[test]
    fn identity_affine_is_identity() {
        let img = gradient(7, 5);
        let out = apply_transforms(
            &img,
            &[TransformOp::Affine {
                shear: 0.0,
                zoom_x: 1.0,
                zoom_y: 1.0,
            }],
        );
        assert_eq!(out, img);
    }

    #[test]
    fn flips_match_direct_pixel_mirroring() {
        let img = gradient(6, 4);
        let out = apply_transforms(&img, &[TransformOp::FlipHorizontal, TransformOp::FlipVertical]);
        for y in 0..4 {
            for x in 0..6 {
                assert_eq!(out.get_pixel(x, y), img.get_pixel(5 - x, 3 - y));
            }
        }
    }

    #[test]
    fn sampled_parameters_respect_ranges() {
        let config = AugmentationConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..500 {
            for op in sample_transforms(&config, &mut rng) {
                if let TransformOp::Affine { shear, zoom_x, zoom_y } = op {
                    assert!(shear.abs() <= 0.2);
                    assert!((0.8..=1.2).contains(&zoom_x));
                    assert!((0.8..=1.2).contains(&zoom_y));
                }
            }
        }
    }

    #[test]
    fn test_side_is_rescale_only() {
        let t = AugmentationConfig::default().test_side();
        assert!(!t.horizontal_flip && !t.vertical_flip);
        assert_eq!(t.shear_range, 0.0);
        assert_eq!(t.zoom_range, 0.0);
        assert_eq!(t.rescale_factor, 255.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sample_transforms(&t, &mut rng).is_empty());
    }

    #[test]
    fn out_of_range_parameters_rejected() {
        let bad = AugmentationConfig {
            zoom_range: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentationConfig {
            shear_range: -0.1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let m = DatasetManifest::new(LabelSet::new(["a", "b"]).unwrap(), vec![]);
        assert!(augment_training_set(&m, &bad, Path::new("/tmp/unused")).is_err());
    }
}
