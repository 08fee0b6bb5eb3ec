//! Spectral-partitioning 3D convolutional network for hyperspectral pixel
//! classification, written from scratch on a small dense tensor type.

pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod infer;
pub mod layers;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod testing;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use model::{Model, ModelConfig};
pub use tensor::Tensor;
