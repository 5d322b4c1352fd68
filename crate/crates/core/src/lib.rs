//! Mask-aware transformer inpainting on a small autograd engine.
//!
//! The core is generic over [`Scalar`] (`f32` or `f64`); the aliases below fix the common choice.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod generator;
pub mod gradsuite;
pub mod image_io;
pub mod losses;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod scalar;
pub mod style;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Generator32 = generator::Generator<f32>;
pub type Discriminator32 = generator::Discriminator<f32>;
pub type Trainer32 = train::Trainer<f32>;
