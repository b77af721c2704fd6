//! Learned image codec whose quantized latents feed a Transformer classifier
//! directly, with an optional reconstruction branch.

pub mod codec;
pub mod config;
pub mod encoder;
pub mod entropy;
pub mod error;
pub mod harness;
pub mod image;
pub mod layers;
pub mod model;
pub mod reconstructor;
pub mod training;
pub mod transformer;
pub mod verify;

#[cfg(test)]
mod test_util;

pub use config::{ConfigFile, ModelConfig, Stage, TrainConfig};
pub use error::{CodecError, Result};
pub use image::Image;
pub use model::Model;
pub use reconstructor::Keep;
