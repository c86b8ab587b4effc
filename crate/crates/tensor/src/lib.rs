//! A small reverse-mode automatic differentiation engine over dense
//! `[N, C, H, W]` tensors, generic over `f32`/`f64`.
//!
//! The op set covers what convolutional encoder/decoder and attention U-Net
//! models need: convolutions, group normalization, separable resizing,
//! offset-driven bilinear warping, batched matrix products, softmax and
//! codebook gathers.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, Var};
pub use ops::sample::ResizeMode;
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
