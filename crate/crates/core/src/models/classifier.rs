use std::collections::HashMap;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, Module, Tensor, Var, D};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backbones::{build_backbone, Backbone, BackboneFamily};
use super::layers::Dense;
use super::params::{ParamEntry, ParamGroup, ParamRole, ParamStore, WeightSource};
use crate::dataset::PixelTensor;
use crate::error::{Error, Result};

/// Environment variable naming the pretrained weight cache directory.
pub const WEIGHTS_DIR_ENV: &str = "ROSE_WEIGHTS_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightInit {
    /// Load extractor weights from the cache; the head is always fresh.
    #[default]
    Pretrained,
    /// Seeded random initialization of every layer (offline mode).
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

impl Precision {
    pub(crate) fn dtype(self) -> DType {
        match self {
            Precision::F32 => DType::F32,
            Precision::F64 => DType::F64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub family: BackboneFamily,
    /// (height, width)
    pub input_size: (usize, usize),
    pub pretrained_source: String,
    pub freeze_extractor: bool,
    /// With a frozen extractor, additionally train this many top blocks.
    #[serde(default)]
    pub fine_tune_top: usize,
    #[serde(default)]
    pub init: WeightInit,
    #[serde(default)]
    pub precision: Precision,
}

impl BackboneSpec {
    pub fn new(family: BackboneFamily) -> Self {
        Self {
            family,
            input_size: family.default_input_size(),
            pretrained_source: family.default_pretrained_source(),
            freeze_extractor: true,
            fine_tune_top: 0,
            init: WeightInit::Pretrained,
            precision: Precision::F32,
        }
    }

    pub fn random_init(mut self, seed: u64) -> Self {
        self.init = WeightInit::Random { seed };
        self
    }

    pub fn with_input_size(mut self, size: (usize, usize)) -> Self {
        self.input_size = size;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let min = self.family.min_input_size();
        if self.input_size.0 < min || self.input_size.1 < min {
            return Err(Error::InvalidArgument(format!(
                "{} requires inputs of at least {min}x{min}, got {}x{}",
                self.family, self.input_size.0, self.input_size.1
            )));
        }
        if self.fine_tune_top > self.family.block_count() {
            return Err(Error::InvalidArgument(format!(
                "{} has {} blocks; cannot fine-tune the top {}",
                self.family,
                self.family.block_count(),
                self.fine_tune_top
            )));
        }
        Ok(())
    }

    /// Number of leading extractor blocks that never train.
    fn frozen_blocks(&self) -> usize {
        if self.freeze_extractor {
            self.family.block_count() - self.fine_tune_top
        } else {
            0
        }
    }
}

/// Resolves the cache file for a pretrained identifier.
pub fn pretrained_weights_path(source_id: &str) -> Result<PathBuf> {
    if source_id.is_empty() || source_id.contains(['/', '\\']) || source_id.starts_with('.') {
        return Err(Error::InvalidArgument(format!(
            "invalid pretrained source identifier `{source_id}`"
        )));
    }
    let dir = match std::env::var_os(WEIGHTS_DIR_ENV) {
        Some(dir) => PathBuf::from(dir),
        None => {
            let home = std::env::var_os("HOME").map(PathBuf::from).unwrap_or_default();
            home.join(".cache").join("rosebreed").join("weights")
        }
    };
    Ok(dir.join(format!("{source_id}.safetensors")))
}

fn load_safetensors(path: &Path, label: &str) -> Result<HashMap<String, Tensor>> {
    if !path.is_file() {
        return Err(Error::WeightsUnavailable {
            source_id: label.to_string(),
            reason: format!("{} not found", path.display()),
        });
    }
    candle_core::safetensors::load(path, &Device::Cpu).map_err(|e| Error::WeightsUnavailable {
        source_id: label.to_string(),
        reason: e.to_string(),
    })
}

/// Parameter and layer summary of a built classifier.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSummary {
    pub family: BackboneFamily,
    pub input_size: (usize, usize),
    pub num_classes: usize,
    pub total_parameters: usize,
    pub trainable_parameters: usize,
    pub head_parameters: usize,
    pub conv_layers: usize,
    /// Fully connected layers, head included.
    pub dense_layers: usize,
    pub layer_count: usize,
    pub head: String,
}

/// A backbone feature extractor plus a dense softmax head.
pub struct Classifier {
    spec: BackboneSpec,
    num_classes: usize,
    backbone: Backbone,
    head: Dense,
    params: Vec<ParamEntry>,
    device: Device,
    dtype: DType,
}

impl std::fmt::Debug for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Classifier")
            .field("family", &self.spec.family)
            .field("input_size", &self.spec.input_size)
            .field("num_classes", &self.num_classes)
            .field("dtype", &self.dtype)
            .finish_non_exhaustive()
    }
}

pub fn build_classifier(spec: &BackboneSpec, num_classes: usize) -> Result<Classifier> {
    let source = match spec.init {
        WeightInit::Random { seed } => WeightSource::random(seed),
        WeightInit::Pretrained => {
            let path = pretrained_weights_path(&spec.pretrained_source)?;
            WeightSource {
                label: spec.pretrained_source.clone(),
                loaded: Some(load_safetensors(&path, &spec.pretrained_source)?),
                head_from_loaded: false,
                seed: 0,
            }
        }
    };
    Classifier::assemble(spec, num_classes, source)
}

impl Classifier {
    /// Rebuilds a classifier whose every tensor, head included, comes from
    /// `tensors`.
    pub fn from_tensors(
        spec: &BackboneSpec,
        num_classes: usize,
        tensors: HashMap<String, Tensor>,
        label: &str,
    ) -> Result<Self> {
        let source = WeightSource {
            label: label.to_string(),
            loaded: Some(tensors),
            head_from_loaded: true,
            seed: 0,
        };
        Self::assemble(spec, num_classes, source)
    }

    pub fn from_safetensors(spec: &BackboneSpec, num_classes: usize, path: &Path) -> Result<Self> {
        let label = path.display().to_string();
        let tensors = load_safetensors(path, &label)?;
        Self::from_tensors(spec, num_classes, tensors, &label)
    }

    fn assemble(spec: &BackboneSpec, num_classes: usize, source: WeightSource) -> Result<Self> {
        spec.validate()?;
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let device = Device::Cpu;
        let dtype = spec.precision.dtype();
        let mut store = ParamStore::new(source, device.clone(), dtype);
        let fine_tune = if spec.freeze_extractor {
            spec.fine_tune_top
        } else {
            spec.family.block_count()
        };
        let backbone = build_backbone(spec.family, &mut store, fine_tune)?;
        store.begin(ParamGroup::Head, true);
        let head = Dense::new(&mut store, "head", backbone.feature_dim, num_classes)?;
        let params = store.finish()?;
        Ok(Self {
            spec: spec.clone(),
            num_classes,
            backbone,
            head,
            params,
            device,
            dtype,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn family(&self) -> BackboneFamily {
        self.spec.family
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_size(&self) -> (usize, usize) {
        self.spec.input_size
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    /// Stacks preprocessed images into an `(N, 3, H, W)` batch.
    pub fn batch_tensor(&self, images: &[PixelTensor]) -> Result<Tensor> {
        let (h, w) = self.spec.input_size;
        if images.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        let mut data = Vec::with_capacity(images.len() * h * w * 3);
        for img in images {
            if (img.height, img.width) != (h, w) || img.data.len() != h * w * 3 {
                return Err(Error::Shape {
                    expected: format!("{h}x{w}x3"),
                    got: format!("{}x{}x3", img.height, img.width),
                });
            }
            data.extend_from_slice(&img.data);
        }
        let t = Tensor::from_vec(data, (images.len(), h, w, 3), &self.device)?
            .permute((0, 3, 1, 2))?
            .contiguous()?
            .to_dtype(self.dtype)?;
        Ok(t)
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let (h, w) = self.spec.input_size;
        let ok = matches!(batch.dims(), &[n, 3, bh, bw] if n > 0 && bh == h && bw == w);
        if !ok {
            return Err(Error::Shape {
                expected: format!("(N, 3, {h}, {w})"),
                got: format!("{:?}", batch.dims()),
            });
        }
        Ok(())
    }

    fn run_blocks(&self, x: &Tensor, range: std::ops::Range<usize>) -> Result<Tensor> {
        let mut h = x.clone();
        for block in &self.backbone.blocks[range] {
            h = block.forward(&h)?;
        }
        Ok(h)
    }

    fn pool(&self, x: &Tensor) -> Result<Tensor> {
        Ok(if self.backbone.global_pool {
            x.mean(D::Minus1)?.mean(D::Minus1)?
        } else {
            x.clone()
        })
    }

    /// Extractor output, `(N, feature_dim)`.
    pub fn features(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let h = self.run_blocks(&batch.to_dtype(self.dtype)?, 0..self.backbone.blocks.len())?;
        self.pool(&h)
    }

    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        let f = self.features(batch)?;
        Ok(self.head.forward(&f)?)
    }

    /// Class probabilities, `(N, num_classes)`.
    pub fn forward(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::ops::softmax_last_dim(&self.logits(batch)?)?)
    }

    /// Probabilities for preprocessed images, as `f64` rows.
    pub fn predict(&self, images: &[PixelTensor]) -> Result<Vec<Vec<f64>>> {
        let probs = self.forward(&self.batch_tensor(images)?)?;
        Ok(probs.to_dtype(DType::F64)?.to_vec2::<f64>()?)
    }

    /// Leading blocks whose output can be cached for training.
    pub(crate) fn frozen_prefix_len(&self) -> usize {
        self.spec.frozen_blocks()
    }

    /// Output of the frozen prefix, detached from any gradient graph.
    /// Pooled when the whole extractor is frozen.
    pub(crate) fn frozen_activations(&self, batch: &Tensor) -> Result<Tensor> {
        self.check_batch(batch)?;
        let n = self.frozen_prefix_len();
        let h = self.run_blocks(&batch.to_dtype(self.dtype)?, 0..n)?;
        let h = if n == self.backbone.blocks.len() {
            self.pool(&h)?
        } else {
            h
        };
        Ok(h.detach())
    }

    /// Logits from cached frozen-prefix activations.
    pub(crate) fn logits_from_activations(&self, activations: &Tensor) -> Result<Tensor> {
        let n = self.frozen_prefix_len();
        let total = self.backbone.blocks.len();
        let f = if n == total {
            activations.clone()
        } else {
            self.pool(&self.run_blocks(activations, n..total)?)?
        };
        Ok(self.head.forward(&f)?)
    }

    pub fn trainable_vars(&self) -> Vec<Var> {
        self.params.iter().filter_map(|p| p.var.clone()).collect()
    }

    /// Named parameter tensors, head included, in construction order.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect()
    }

    pub fn save_safetensors(&self, path: &Path) -> Result<()> {
        let map: HashMap<String, Tensor> = self.named_tensors().into_iter().collect();
        candle_core::safetensors::save(&map, path).map_err(|e| match e {
            candle_core::Error::Io(io) => Error::io(path, io),
            other => Error::Tensor(other),
        })
    }

    fn checksum(&self, pick: impl Fn(&ParamEntry) -> bool) -> Result<String> {
        let mut hasher = Sha256::new();
        for p in self.params.iter().filter(|p| pick(p)) {
            hasher.update(p.name.as_bytes());
            let flat = p.tensor.flatten_all()?;
            match self.dtype {
                DType::F64 => {
                    for v in flat.to_vec1::<f64>()? {
                        hasher.update(v.to_le_bytes());
                    }
                }
                _ => {
                    for v in flat.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                        hasher.update(v.to_le_bytes());
                    }
                }
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }

    /// SHA-256 over every extractor tensor.
    pub fn extractor_checksum(&self) -> Result<String> {
        self.checksum(|p| matches!(p.group, ParamGroup::Extractor { .. }))
    }

    pub fn head_checksum(&self) -> Result<String> {
        self.checksum(|p| p.group == ParamGroup::Head)
    }

    pub fn describe(&self) -> ClassifierSummary {
        let total = self.params.iter().map(ParamEntry::numel).sum();
        let trainable = self
            .params
            .iter()
            .filter(|p| p.var.is_some())
            .map(ParamEntry::numel)
            .sum();
        let head_parameters = self
            .params
            .iter()
            .filter(|p| p.group == ParamGroup::Head && p.role == ParamRole::Weight)
            .map(ParamEntry::numel)
            .sum();
        let dense_layers = self.backbone.dense_layers + 1;
        let pooling = if self.backbone.global_pool {
            "global average pooling -> "
        } else {
            ""
        };
        ClassifierSummary {
            family: self.spec.family,
            input_size: self.spec.input_size,
            num_classes: self.num_classes,
            total_parameters: total,
            trainable_parameters: trainable,
            head_parameters,
            conv_layers: self.backbone.conv_layers,
            dense_layers,
            layer_count: self.backbone.conv_layers + dense_layers,
            head: format!(
                "{pooling}dense({} -> {}) -> softmax",
                self.backbone.feature_dim, self.num_classes
            ),
        }
    }
}

/// Seeded random-init classifier over the two-convolution stub extractor,
/// in double precision.
pub fn stub_classifier(num_classes: usize, input: usize, seed: u64) -> Result<Classifier> {
    let spec = BackboneSpec {
        precision: Precision::F64,
        ..BackboneSpec::new(BackboneFamily::Micro)
            .with_input_size((input, input))
            .random_init(seed)
    };
    build_classifier(&spec, num_classes)
}
