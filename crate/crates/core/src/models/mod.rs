//! Transfer-learning classifiers: an ImageNet-style feature extractor from
//! one of four families with a fresh dense softmax head.

mod backbones;
mod classifier;
mod depthwise;
mod layers;
mod params;

pub use backbones::BackboneFamily;
pub use classifier::{
    build_classifier, pretrained_weights_path, stub_classifier, BackboneSpec, Classifier,
    ClassifierSummary, Precision, WeightInit, WEIGHTS_DIR_ENV,
};
