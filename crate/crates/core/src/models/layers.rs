use candle_core::{Module, Result, Tensor};

use super::depthwise::depthwise_conv;
use super::params::{Init, ParamRole, ParamStore};
use crate::error::Result as CrateResult;

pub(crate) type BoxedModule = Box<dyn Module + Send + Sync>;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Padding {
    Valid,
    /// Stride-1 "same": `k / 2` on each side of each axis.
    Same,
    Explicit(usize, usize),
}

impl Padding {
    fn amounts(self, (kh, kw): (usize, usize)) -> (usize, usize) {
        match self {
            Padding::Valid => (0, 0),
            Padding::Same => (kh / 2, kw / 2),
            Padding::Explicit(h, w) => (h, w),
        }
    }
}

fn pad_zeros(x: &Tensor, (ph, pw): (usize, usize)) -> Result<Tensor> {
    let mut x = x.clone();
    if ph > 0 {
        x = x.pad_with_zeros(2, ph, ph)?;
    }
    if pw > 0 {
        x = x.pad_with_zeros(3, pw, pw)?;
    }
    Ok(x)
}

pub(crate) struct Conv2d {
    weight: Tensor,
    bias: Option<Tensor>,
    stride: usize,
    pad: (usize, usize),
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
        bias: bool,
    ) -> CrateResult<Self> {
        let fan_in = cin * kernel.0 * kernel.1;
        let weight = store.get(
            &format!("{name}.weight"),
            &[cout, cin, kernel.0, kernel.1],
            Init::HeNormal { fan_in },
            ParamRole::Weight,
        )?;
        let bias = if bias {
            Some(store.get(&format!("{name}.bias"), &[cout], Init::Const(0.0), ParamRole::Weight)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            stride,
            pad: padding.amounts(kernel),
        })
    }
}

impl Module for Conv2d {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = if self.pad.0 == self.pad.1 {
            x.conv2d(&self.weight, self.pad.0, self.stride, 1, 1)?
        } else {
            pad_zeros(x, self.pad)?.conv2d(&self.weight, 0, self.stride, 1, 1)?
        };
        match &self.bias {
            Some(b) => y.broadcast_add(&b.reshape((1, b.dim(0)?, 1, 1))?),
            None => Ok(y),
        }
    }
}

/// Inference-mode batch normalization over channel axis 1.
pub(crate) struct BatchNorm {
    gamma: Option<Tensor>,
    beta: Tensor,
    mean: Tensor,
    var: Tensor,
    eps: f64,
}

impl BatchNorm {
    /// `gamma_init` only affects random initialization.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        scale: bool,
        eps: f64,
        gamma_init: f32,
    ) -> CrateResult<Self> {
        let gamma = if scale {
            Some(store.get(&format!("{name}.gamma"), &[channels], Init::Const(gamma_init), ParamRole::Weight)?)
        } else {
            None
        };
        let beta = store.get(&format!("{name}.beta"), &[channels], Init::Const(0.0), ParamRole::Weight)?;
        let mean = store.get(
            &format!("{name}.running_mean"),
            &[channels],
            Init::Const(0.0),
            ParamRole::RunningStat,
        )?;
        let var = store.get(
            &format!("{name}.running_var"),
            &[channels],
            Init::Const(1.0),
            ParamRole::RunningStat,
        )?;
        Ok(Self {
            gamma,
            beta,
            mean,
            var,
            eps,
        })
    }
}

impl Module for BatchNorm {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let c = self.beta.dim(0)?;
        let inv_std = (&self.var + self.eps)?.sqrt()?.recip()?;
        let scale = match &self.gamma {
            Some(g) => (g * inv_std)?,
            None => inv_std,
        };
        let shift = (&self.beta - (&self.mean * &scale)?)?;
        x.broadcast_mul(&scale.reshape((1, c, 1, 1))?)?
            .broadcast_add(&shift.reshape((1, c, 1, 1))?)
    }
}

pub(crate) struct Relu;

impl Module for Relu {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.relu()
    }
}

pub(crate) struct MaxPool {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Module for MaxPool {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        // Edge replication never changes a window maximum when pad < kernel.
        let x = if self.pad > 0 {
            x.pad_with_same(2, self.pad, self.pad)?
                .pad_with_same(3, self.pad, self.pad)?
        } else {
            x.clone()
        };
        x.max_pool2d_with_stride(self.kernel, self.stride)
    }
}

pub(crate) struct AvgPool {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Module for AvgPool {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        pad_zeros(x, (self.pad, self.pad))?.avg_pool2d_with_stride(self.kernel, self.stride)
    }
}

/// Adaptive average pooling to a fixed spatial grid, then flatten.
pub(crate) struct AdaptiveAvgFlatten {
    pub out: usize,
}

impl Module for AdaptiveAvgFlatten {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (_, _, h, w) = x.dims4()?;
        let pooled = if h == self.out && w == self.out {
            x.clone()
        } else {
            let bins = |n: usize, i: usize| {
                let start = i * n / self.out;
                let end = ((i + 1) * n).div_ceil(self.out);
                (start, end - start)
            };
            let mut rows = Vec::with_capacity(self.out);
            for i in 0..self.out {
                let (y0, hy) = bins(h, i);
                let band = x.narrow(2, y0, hy)?.mean_keepdim(2)?;
                let mut cells = Vec::with_capacity(self.out);
                for j in 0..self.out {
                    let (x0, wx) = bins(w, j);
                    cells.push(band.narrow(3, x0, wx)?.mean_keepdim(3)?);
                }
                rows.push(Tensor::cat(&cells, 3)?);
            }
            Tensor::cat(&rows, 2)?
        };
        pooled.flatten_from(1)
    }
}

pub(crate) struct Dense {
    weight: Tensor,
    bias: Tensor,
}

impl Dense {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> CrateResult<Self> {
        let weight = store.get(
            &format!("{name}.weight"),
            &[fan_in, fan_out],
            Init::GlorotUniform { fan_in, fan_out },
            ParamRole::Weight,
        )?;
        let bias = store.get(&format!("{name}.bias"), &[fan_out], Init::Const(0.0), ParamRole::Weight)?;
        Ok(Self { weight, bias })
    }
}

impl Module for Dense {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.matmul(&self.weight)?.broadcast_add(&self.bias)
    }
}

/// Depthwise convolution (stride 1, same padding) followed by a pointwise
/// 1×1 convolution, both without bias.
pub(crate) struct SeparableConv {
    depthwise: Tensor,
    pointwise: Tensor,
}

impl SeparableConv {
    pub fn new(store: &mut ParamStore, name: &str, cin: usize, cout: usize, kernel: usize) -> CrateResult<Self> {
        let depthwise = store.get(
            &format!("{name}.depthwise"),
            &[cin, 1, kernel, kernel],
            Init::HeNormal {
                fan_in: kernel * kernel,
            },
            ParamRole::Weight,
        )?;
        let pointwise = store.get(
            &format!("{name}.pointwise"),
            &[cout, cin, 1, 1],
            Init::HeNormal { fan_in: cin },
            ParamRole::Weight,
        )?;
        Ok(Self {
            depthwise,
            pointwise,
        })
    }
}

impl Module for SeparableConv {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        depthwise_conv(x, &self.depthwise)?.conv2d(&self.pointwise, 0, 1, 1, 1)
    }
}

#[derive(Default)]
pub(crate) struct Sequential {
    layers: Vec<BoxedModule>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, layer: impl Module + Send + Sync + 'static) {
        self.layers.push(Box::new(layer));
    }

    pub fn with(mut self, layer: impl Module + Send + Sync + 'static) -> Self {
        self.push(layer);
        self
    }
}

impl Module for Sequential {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.layers.iter().try_fold(x.clone(), |h, l| l.forward(&h))
    }
}

/// Parallel branches concatenated along channels.
pub(crate) struct Concat {
    pub branches: Vec<BoxedModule>,
}

impl Module for Concat {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(x))
            .collect::<Result<Vec<_>>>()?;
        Tensor::cat(&outs, 1)
    }
}

/// `main(x) + shortcut(x)` with an identity shortcut when none is given.
pub(crate) struct Residual {
    pub main: Sequential,
    pub shortcut: Option<Sequential>,
    pub post_relu: bool,
}

impl Module for Residual {
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let main = self.main.forward(x)?;
        let skip = match &self.shortcut {
            Some(s) => s.forward(x)?,
            None => x.clone(),
        };
        let y = (main + skip)?;
        if self.post_relu {
            y.relu()
        } else {
            Ok(y)
        }
    }
}
