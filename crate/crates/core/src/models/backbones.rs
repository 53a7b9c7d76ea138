//! Feature-extractor definitions. Each follows the layout of the reference
//! ImageNet network so that parameter tensors line up with converted
//! pretrained weight files; parameter names are the weight-file keys.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::layers::{
    AdaptiveAvgFlatten, AvgPool, BatchNorm, BoxedModule, Concat, Conv2d, Dense, MaxPool, Padding,
    Relu, Residual, SeparableConv, Sequential,
};
use super::params::{ParamGroup, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackboneFamily {
    InceptionV3,
    Xception,
    #[serde(rename = "resnet50")]
    ResNet50,
    #[serde(rename = "vgg16")]
    Vgg16,
    /// Two-convolution stand-in for fast tests and smoke runs; not an
    /// ImageNet architecture.
    Micro,
}

impl BackboneFamily {
    /// The four ImageNet transfer-learning families.
    pub const TRANSFER: [BackboneFamily; 4] = [
        BackboneFamily::InceptionV3,
        BackboneFamily::Xception,
        BackboneFamily::ResNet50,
        BackboneFamily::Vgg16,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BackboneFamily::InceptionV3 => "inception_v3",
            BackboneFamily::Xception => "xception",
            BackboneFamily::ResNet50 => "resnet50",
            BackboneFamily::Vgg16 => "vgg16",
            BackboneFamily::Micro => "micro",
        }
    }

    /// Display name used in reports.
    pub fn display_name(self) -> &'static str {
        match self {
            BackboneFamily::InceptionV3 => "Inception V3",
            BackboneFamily::Xception => "Xception",
            BackboneFamily::ResNet50 => "ResNet50",
            BackboneFamily::Vgg16 => "VGG16",
            BackboneFamily::Micro => "Micro",
        }
    }

    pub fn default_input_size(self) -> (usize, usize) {
        match self {
            BackboneFamily::InceptionV3 | BackboneFamily::Xception => (299, 299),
            BackboneFamily::ResNet50 | BackboneFamily::Vgg16 => (224, 224),
            BackboneFamily::Micro => (32, 32),
        }
    }

    pub fn min_input_size(self) -> usize {
        match self {
            BackboneFamily::InceptionV3 => 75,
            BackboneFamily::Xception => 71,
            BackboneFamily::ResNet50 | BackboneFamily::Vgg16 => 32,
            BackboneFamily::Micro => 8,
        }
    }

    /// Number of fine-tunable blocks the extractor is divided into.
    pub fn block_count(self) -> usize {
        match self {
            BackboneFamily::InceptionV3 => 16,
            BackboneFamily::Xception => 14,
            BackboneFamily::ResNet50 => 17,
            BackboneFamily::Vgg16 => 15,
            BackboneFamily::Micro => 2,
        }
    }

    pub fn default_pretrained_source(self) -> String {
        format!("imagenet-{}", self.as_str())
    }
}

impl fmt::Display for BackboneFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BackboneFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .trim()
            .to_ascii_lowercase()
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect();
        match key.as_str() {
            "inceptionv3" => Ok(BackboneFamily::InceptionV3),
            "xception" => Ok(BackboneFamily::Xception),
            "resnet50" => Ok(BackboneFamily::ResNet50),
            "vgg16" => Ok(BackboneFamily::Vgg16),
            "micro" => Ok(BackboneFamily::Micro),
            _ => Err(Error::InvalidArgument(format!(
                "unknown backbone family `{s}` (expected inception_v3, xception, resnet50, vgg16 or micro)"
            ))),
        }
    }
}

pub(crate) struct Backbone {
    pub blocks: Vec<BoxedModule>,
    /// Extractor output is a spatial map that needs global average pooling.
    pub global_pool: bool,
    pub feature_dim: usize,
    /// Convolution layers on the main path (projection shortcuts excluded).
    pub conv_layers: usize,
    /// Fully connected layers inside the extractor.
    pub dense_layers: usize,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    blocks: Vec<BoxedModule>,
    trainable_from: usize,
    conv_layers: usize,
    dense_layers: usize,
}

#[derive(Clone, Copy)]
struct ConvBn {
    kernel: (usize, usize),
    stride: usize,
    padding: Padding,
    bias: bool,
    bn_scale: bool,
    eps: f64,
    relu: bool,
    main_path: bool,
    /// Closes a residual branch: random init starts its scale at zero so
    /// the block begins as its shortcut.
    zero_gamma: bool,
}

impl ConvBn {
    fn new(k: usize) -> Self {
        Self {
            kernel: (k, k),
            stride: 1,
            padding: Padding::Same,
            bias: false,
            bn_scale: true,
            eps: 1e-3,
            relu: true,
            main_path: true,
            zero_gamma: false,
        }
    }
    fn kernel(mut self, kh: usize, kw: usize) -> Self {
        self.kernel = (kh, kw);
        self
    }
    fn stride(mut self, s: usize) -> Self {
        self.stride = s;
        self
    }
    fn valid(mut self) -> Self {
        self.padding = Padding::Valid;
        self
    }
    fn no_relu(mut self) -> Self {
        self.relu = false;
        self
    }
    fn closes_branch(mut self) -> Self {
        self.zero_gamma = true;
        self
    }
    fn shortcut(mut self) -> Self {
        self.main_path = false;
        self.relu = false;
        self
    }
}

impl<'a> Builder<'a> {
    fn new(store: &'a mut ParamStore, family: BackboneFamily, fine_tune_top: usize) -> Self {
        Self {
            store,
            blocks: Vec::new(),
            trainable_from: family.block_count().saturating_sub(fine_tune_top),
            conv_layers: 0,
            dense_layers: 0,
        }
    }

    fn begin(&mut self) {
        let i = self.blocks.len();
        self.store
            .begin(ParamGroup::Extractor { block: i }, i >= self.trainable_from);
    }

    fn end(&mut self, block: impl candle_core::Module + Send + Sync + 'static) {
        self.blocks.push(Box::new(block));
    }

    fn conv_bn(&mut self, name: &str, cin: usize, cout: usize, c: ConvBn) -> Result<Sequential> {
        let conv = Conv2d::new(self.store, name, cin, cout, c.kernel, c.stride, c.padding, c.bias)?;
        let gamma = if c.zero_gamma { 0.0 } else { 1.0 };
        let bn = BatchNorm::new(self.store, &format!("{name}_bn"), cout, c.bn_scale, c.eps, gamma)?;
        if c.main_path {
            self.conv_layers += 1;
        }
        let mut seq = Sequential::new().with(conv).with(bn);
        if c.relu {
            seq.push(Relu);
        }
        Ok(seq)
    }

    fn sep_bn(&mut self, name: &str, cin: usize, cout: usize, closes_branch: bool) -> Result<Sequential> {
        let sep = SeparableConv::new(self.store, name, cin, cout, 3)?;
        let gamma = if closes_branch { 0.0 } else { 1.0 };
        let bn = BatchNorm::new(self.store, &format!("{name}_bn"), cout, true, 1e-3, gamma)?;
        self.conv_layers += 1;
        Ok(Sequential::new().with(sep).with(bn))
    }

    fn finish(self, global_pool: bool, feature_dim: usize, family: BackboneFamily) -> Backbone {
        debug_assert_eq!(self.blocks.len(), family.block_count());
        Backbone {
            blocks: self.blocks,
            global_pool,
            feature_dim,
            conv_layers: self.conv_layers,
            dense_layers: self.dense_layers,
        }
    }
}

pub(crate) fn build_backbone(
    family: BackboneFamily,
    store: &mut ParamStore,
    fine_tune_top: usize,
) -> Result<Backbone> {
    let b = Builder::new(store, family, fine_tune_top);
    match family {
        BackboneFamily::Vgg16 => vgg16(b),
        BackboneFamily::ResNet50 => resnet50(b),
        BackboneFamily::InceptionV3 => inception_v3(b),
        BackboneFamily::Xception => xception(b),
        BackboneFamily::Micro => micro(b),
    }
}

fn vgg16(mut b: Builder) -> Result<Backbone> {
    let stages: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
    let mut cin = 3;
    for (s, &(width, convs)) in stages.iter().enumerate() {
        for i in 0..convs {
            b.begin();
            let name = format!("block{}_conv{}", s + 1, i + 1);
            let conv = Conv2d::new(b.store, &name, cin, width, (3, 3), 1, Padding::Same, true)?;
            b.conv_layers += 1;
            let mut block = Sequential::new().with(conv).with(Relu);
            if i + 1 == convs {
                block.push(MaxPool {
                    kernel: 2,
                    stride: 2,
                    pad: 0,
                });
            }
            if s + 1 == stages.len() && i + 1 == convs {
                block.push(AdaptiveAvgFlatten { out: 7 });
            }
            b.end(block);
            cin = width;
        }
    }
    for (name, fan_in) in [("fc1", 512 * 7 * 7), ("fc2", 4096)] {
        b.begin();
        let dense = Dense::new(b.store, name, fan_in, 4096)?;
        b.dense_layers += 1;
        b.end(Sequential::new().with(dense).with(Relu));
    }
    Ok(b.finish(false, 4096, BackboneFamily::Vgg16))
}

fn resnet50(mut b: Builder) -> Result<Backbone> {
    let cb = |k: usize| ConvBn {
        bias: true,
        eps: 1.001e-5,
        ..ConvBn::new(k)
    };
    b.begin();
    let mut stem = b.conv_bn(
        "conv1",
        3,
        64,
        ConvBn {
            padding: Padding::Explicit(3, 3),
            ..cb(7).stride(2)
        },
    )?;
    stem.push(MaxPool {
        kernel: 3,
        stride: 2,
        pad: 1,
    });
    b.end(stem);

    let stages: [(usize, usize, usize); 4] = [(64, 3, 1), (128, 4, 2), (256, 6, 2), (512, 3, 2)];
    let mut cin = 64;
    for (s, &(filters, n, stride)) in stages.iter().enumerate() {
        for i in 0..n {
            b.begin();
            let name = format!("conv{}_block{}", s + 2, i + 1);
            let st = if i == 0 { stride } else { 1 };
            let shortcut = if i == 0 {
                Some(b.conv_bn(&format!("{name}_0"), cin, 4 * filters, cb(1).stride(st).shortcut())?)
            } else {
                None
            };
            let mut main = b.conv_bn(&format!("{name}_1"), cin, filters, cb(1).stride(st))?;
            main.push(b.conv_bn(&format!("{name}_2"), filters, filters, cb(3))?);
            main.push(b.conv_bn(&format!("{name}_3"), filters, 4 * filters, cb(1).no_relu().closes_branch())?);
            b.end(Residual {
                main,
                shortcut,
                post_relu: true,
            });
            cin = 4 * filters;
        }
    }
    Ok(b.finish(true, 2048, BackboneFamily::ResNet50))
}

fn inception_v3(mut b: Builder) -> Result<Backbone> {
    let c = |k: usize| ConvBn {
        bn_scale: false,
        ..ConvBn::new(k)
    };
    let pool3s2 = || MaxPool {
        kernel: 3,
        stride: 2,
        pad: 0,
    };
    let avg_same = || AvgPool {
        kernel: 3,
        stride: 1,
        pad: 1,
    };

    b.begin();
    let s = b.conv_bn("conv2d_1", 3, 32, c(3).stride(2).valid())?;
    b.end(s);
    b.begin();
    let s = b.conv_bn("conv2d_2", 32, 32, c(3).valid())?;
    b.end(s);
    b.begin();
    let s = b.conv_bn("conv2d_3", 32, 64, c(3))?.with(pool3s2());
    b.end(s);
    b.begin();
    let s = b.conv_bn("conv2d_4", 64, 80, c(1).valid())?;
    b.end(s);
    b.begin();
    let s = b.conv_bn("conv2d_5", 80, 192, c(3).valid())?.with(pool3s2());
    b.end(s);

    // 35x35 blocks.
    let mut cin = 192;
    for (i, pool_width) in [32usize, 64, 64].into_iter().enumerate() {
        b.begin();
        let n = format!("mixed{i}");
        let b1 = b.conv_bn(&format!("{n}_1x1"), cin, 64, c(1))?;
        let b5 = b
            .conv_bn(&format!("{n}_5x5_1"), cin, 48, c(1))?
            .with(b.conv_bn(&format!("{n}_5x5_2"), 48, 64, c(5))?);
        let b3 = b
            .conv_bn(&format!("{n}_3x3dbl_1"), cin, 64, c(1))?
            .with(b.conv_bn(&format!("{n}_3x3dbl_2"), 64, 96, c(3))?)
            .with(b.conv_bn(&format!("{n}_3x3dbl_3"), 96, 96, c(3))?);
        let bp = Sequential::new()
            .with(avg_same())
            .with(b.conv_bn(&format!("{n}_pool"), cin, pool_width, c(1))?);
        b.end(Concat {
            branches: vec![Box::new(b1), Box::new(b5), Box::new(b3), Box::new(bp)],
        });
        cin = 64 + 64 + 96 + pool_width;
    }

    // Reduction to 17x17.
    b.begin();
    let b3 = b.conv_bn("mixed3_3x3", cin, 384, c(3).stride(2).valid())?;
    let b3d = b
        .conv_bn("mixed3_3x3dbl_1", cin, 64, c(1))?
        .with(b.conv_bn("mixed3_3x3dbl_2", 64, 96, c(3))?)
        .with(b.conv_bn("mixed3_3x3dbl_3", 96, 96, c(3).stride(2).valid())?);
    b.end(Concat {
        branches: vec![Box::new(b3), Box::new(b3d), Box::new(pool3s2())],
    });
    let cin = 768;

    for (i, w) in [128usize, 160, 160, 192].into_iter().enumerate() {
        b.begin();
        let n = format!("mixed{}", i + 4);
        let b1 = b.conv_bn(&format!("{n}_1x1"), cin, 192, c(1))?;
        let b7 = b
            .conv_bn(&format!("{n}_7x7_1"), cin, w, c(1))?
            .with(b.conv_bn(&format!("{n}_7x7_2"), w, w, c(1).kernel(1, 7))?)
            .with(b.conv_bn(&format!("{n}_7x7_3"), w, 192, c(1).kernel(7, 1))?);
        let b7d = b
            .conv_bn(&format!("{n}_7x7dbl_1"), cin, w, c(1))?
            .with(b.conv_bn(&format!("{n}_7x7dbl_2"), w, w, c(1).kernel(7, 1))?)
            .with(b.conv_bn(&format!("{n}_7x7dbl_3"), w, w, c(1).kernel(1, 7))?)
            .with(b.conv_bn(&format!("{n}_7x7dbl_4"), w, w, c(1).kernel(7, 1))?)
            .with(b.conv_bn(&format!("{n}_7x7dbl_5"), w, 192, c(1).kernel(1, 7))?);
        let bp = Sequential::new()
            .with(avg_same())
            .with(b.conv_bn(&format!("{n}_pool"), cin, 192, c(1))?);
        b.end(Concat {
            branches: vec![Box::new(b1), Box::new(b7), Box::new(b7d), Box::new(bp)],
        });
    }

    // Reduction to 8x8.
    b.begin();
    let b3 = b
        .conv_bn("mixed8_3x3_1", cin, 192, c(1))?
        .with(b.conv_bn("mixed8_3x3_2", 192, 320, c(3).stride(2).valid())?);
    let b7x3 = b
        .conv_bn("mixed8_7x7x3_1", cin, 192, c(1))?
        .with(b.conv_bn("mixed8_7x7x3_2", 192, 192, c(1).kernel(1, 7))?)
        .with(b.conv_bn("mixed8_7x7x3_3", 192, 192, c(1).kernel(7, 1))?)
        .with(b.conv_bn("mixed8_7x7x3_4", 192, 192, c(3).stride(2).valid())?);
    b.end(Concat {
        branches: vec![Box::new(b3), Box::new(b7x3), Box::new(pool3s2())],
    });

    let mut cin = 1280;
    for i in 9..=10 {
        b.begin();
        let n = format!("mixed{i}");
        let b1 = b.conv_bn(&format!("{n}_1x1"), cin, 320, c(1))?;
        let split3 = Concat {
            branches: vec![
                Box::new(b.conv_bn(&format!("{n}_3x3_2a"), 384, 384, c(1).kernel(1, 3))?),
                Box::new(b.conv_bn(&format!("{n}_3x3_2b"), 384, 384, c(1).kernel(3, 1))?),
            ],
        };
        let b3 = b.conv_bn(&format!("{n}_3x3_1"), cin, 384, c(1))?.with(split3);
        let split3d = Concat {
            branches: vec![
                Box::new(b.conv_bn(&format!("{n}_3x3dbl_3a"), 384, 384, c(1).kernel(1, 3))?),
                Box::new(b.conv_bn(&format!("{n}_3x3dbl_3b"), 384, 384, c(1).kernel(3, 1))?),
            ],
        };
        let b3d = b
            .conv_bn(&format!("{n}_3x3dbl_1"), cin, 448, c(1))?
            .with(b.conv_bn(&format!("{n}_3x3dbl_2"), 448, 384, c(3))?)
            .with(split3d);
        let bp = Sequential::new()
            .with(avg_same())
            .with(b.conv_bn(&format!("{n}_pool"), cin, 192, c(1))?);
        b.end(Concat {
            branches: vec![Box::new(b1), Box::new(b3), Box::new(b3d), Box::new(bp)],
        });
        cin = 2048;
    }
    Ok(b.finish(true, 2048, BackboneFamily::InceptionV3))
}

fn xception(mut b: Builder) -> Result<Backbone> {
    let pool = || MaxPool {
        kernel: 3,
        stride: 2,
        pad: 1,
    };

    b.begin();
    let stem = b
        .conv_bn("block1_conv1", 3, 32, ConvBn::new(3).stride(2).valid())?
        .with(b.conv_bn("block1_conv2", 32, 64, ConvBn::new(3).valid())?);
    b.end(stem);

    let mut cin = 64;
    for (i, width) in [128usize, 256, 728].into_iter().enumerate() {
        b.begin();
        let n = format!("block{}", i + 2);
        let shortcut = b.conv_bn(&format!("{n}_shortcut"), cin, width, ConvBn::new(1).stride(2).shortcut())?;
        let mut main = Sequential::new();
        if i > 0 {
            main.push(Relu);
        }
        main.push(b.sep_bn(&format!("{n}_sepconv1"), cin, width, false)?);
        main.push(Relu);
        main.push(b.sep_bn(&format!("{n}_sepconv2"), width, width, true)?);
        main.push(pool());
        b.end(Residual {
            main,
            shortcut: Some(shortcut),
            post_relu: false,
        });
        cin = width;
    }

    for i in 0..8 {
        b.begin();
        let n = format!("block{}", i + 5);
        let mut main = Sequential::new();
        for j in 1..=3 {
            main.push(Relu);
            main.push(b.sep_bn(&format!("{n}_sepconv{j}"), 728, 728, j == 3)?);
        }
        b.end(Residual {
            main,
            shortcut: None,
            post_relu: false,
        });
    }

    b.begin();
    let shortcut = b.conv_bn("block13_shortcut", 728, 1024, ConvBn::new(1).stride(2).shortcut())?;
    let main = Sequential::new()
        .with(Relu)
        .with(b.sep_bn("block13_sepconv1", 728, 728, false)?)
        .with(Relu)
        .with(b.sep_bn("block13_sepconv2", 728, 1024, true)?)
        .with(pool());
    b.end(Residual {
        main,
        shortcut: Some(shortcut),
        post_relu: false,
    });

    b.begin();
    let exit = Sequential::new()
        .with(b.sep_bn("block14_sepconv1", 1024, 1536, false)?)
        .with(Relu)
        .with(b.sep_bn("block14_sepconv2", 1536, 2048, false)?)
        .with(Relu);
    b.end(exit);
    Ok(b.finish(true, 2048, BackboneFamily::Xception))
}

fn micro(mut b: Builder) -> Result<Backbone> {
    b.begin();
    let conv = Conv2d::new(b.store, "conv1", 3, 8, (3, 3), 1, Padding::Same, true)?;
    b.conv_layers += 1;
    b.end(Sequential::new().with(conv).with(Relu));
    b.begin();
    let conv = Conv2d::new(b.store, "conv2", 8, 16, (3, 3), 2, Padding::Same, true)?;
    b.conv_layers += 1;
    b.end(Sequential::new().with(conv).with(Relu));
    Ok(b.finish(true, 16, BackboneFamily::Micro))
}
