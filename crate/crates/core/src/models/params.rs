use std::collections::HashMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::util;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamRole {
    Weight,
    /// Batch-norm running statistics: counted in totals, never trained.
    RunningStat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ParamGroup {
    Extractor { block: usize },
    Head,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Const(f32),
    HeNormal { fan_in: usize },
    GlorotUniform { fan_in: usize, fan_out: usize },
}

pub(crate) struct ParamEntry {
    pub name: String,
    pub tensor: Tensor,
    pub var: Option<Var>,
    pub role: ParamRole,
    pub group: ParamGroup,
}

impl ParamEntry {
    pub fn numel(&self) -> usize {
        self.tensor.elem_count()
    }
}

/// Where parameter values come from.
pub(crate) struct WeightSource {
    /// Label used in error messages (pretrained identifier or file path).
    pub label: String,
    pub loaded: Option<HashMap<String, Tensor>>,
    /// Whether head tensors must be present in `loaded`.
    pub head_from_loaded: bool,
    pub seed: u64,
}

impl WeightSource {
    pub fn random(seed: u64) -> Self {
        Self {
            label: "random-init".into(),
            loaded: None,
            head_from_loaded: false,
            seed,
        }
    }
}

/// Collects the parameters of a network as it is constructed.
pub(crate) struct ParamStore {
    pub entries: Vec<ParamEntry>,
    source: WeightSource,
    device: Device,
    dtype: DType,
    group: ParamGroup,
    trainable: bool,
}

impl ParamStore {
    pub fn new(source: WeightSource, device: Device, dtype: DType) -> Self {
        Self {
            entries: Vec::new(),
            source,
            device,
            dtype,
            group: ParamGroup::Extractor { block: 0 },
            trainable: false,
        }
    }

    pub fn begin(&mut self, group: ParamGroup, trainable: bool) {
        self.group = group;
        self.trainable = trainable;
    }

    pub fn get(&mut self, name: &str, shape: &[usize], init: Init, role: ParamRole) -> Result<Tensor> {
        let use_loaded = match self.group {
            ParamGroup::Head => self.source.head_from_loaded,
            ParamGroup::Extractor { .. } => true,
        };
        let tensor = match (&mut self.source.loaded, use_loaded) {
            (Some(map), true) => {
                let t = map.remove(name).ok_or_else(|| Error::WeightsUnavailable {
                    source_id: self.source.label.clone(),
                    reason: format!("missing tensor `{name}`"),
                })?;
                if t.dims() != shape {
                    return Err(Error::WeightsUnavailable {
                        source_id: self.source.label.clone(),
                        reason: format!(
                            "tensor `{name}` has shape {:?}, expected {shape:?}",
                            t.dims()
                        ),
                    });
                }
                t.to_device(&self.device)?.to_dtype(self.dtype)?
            }
            _ => self.sample(name, shape, init)?,
        };
        let trainable = self.trainable && role == ParamRole::Weight;
        let (tensor, var) = if trainable {
            let var = Var::from_tensor(&tensor)?;
            (var.as_tensor().clone(), Some(var))
        } else {
            (tensor, None)
        };
        self.entries.push(ParamEntry {
            name: name.to_string(),
            tensor: tensor.clone(),
            var,
            role,
            group: self.group,
        });
        Ok(tensor)
    }

    fn sample(&self, name: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let values: Vec<f32> = match init {
            Init::Const(v) => vec![v; n],
            Init::HeNormal { fan_in } => {
                let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(self.source.seed, name));
                let std = (2.0 / fan_in as f32).sqrt();
                (0..n)
                    .map(|_| {
                        let z: f32 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect()
            }
            Init::GlorotUniform { fan_in, fan_out } => {
                let mut rng = ChaCha8Rng::seed_from_u64(util::derive_seed(self.source.seed, name));
                let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
                (0..n).map(|_| rng.random_range(-limit..limit)).collect()
            }
        };
        Ok(Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?)
    }

    /// Tensors left over in a loaded source indicate a different architecture.
    pub fn finish(self) -> Result<Vec<ParamEntry>> {
        if let Some(map) = &self.source.loaded {
            let mut unused: Vec<&String> = map.keys().collect();
            unused.sort();
            let head_leftover = !self.source.head_from_loaded;
            let unexpected: Vec<&&String> = unused
                .iter()
                .filter(|k| !(head_leftover && k.starts_with("head.")))
                .collect();
            if let Some(first) = unexpected.first() {
                return Err(Error::WeightsUnavailable {
                    source_id: self.source.label.clone(),
                    reason: format!(
                        "{} unexpected tensors (first: `{first}`)",
                        unexpected.len()
                    ),
                });
            }
        }
        Ok(self.entries)
    }
}
