//! Dual-branch nuclei segmentation: a Unet branch and a transformer-augmented
//! branch run side by side on the same image, their feature maps are fused,
//! and a 1x1 head produces a single foreground logit map.
//!
//! Everything is built on the small reverse-mode autodiff engine in
//! [`tensor`]; the scalar type is generic so training runs in `f32` while
//! gradient checks run in `f64`.

pub mod checks;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ModelConfig, Trans2UnetModel};
pub use scalar::Scalar;
pub use tensor::ops::{concat, Mode, Padding};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
