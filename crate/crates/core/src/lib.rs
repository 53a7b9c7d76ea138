//! Rose breed detection: dataset preparation, transfer-learning classifiers
//! over four convolutional backbones, training, evaluation, a file-system
//! model registry and the breed knowledge base used by the inference service.

pub mod breedbase;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod models;
pub mod registry;
pub mod training;
pub mod plot;
mod util;

pub use error::{Error, ErrorCategory, Result};
