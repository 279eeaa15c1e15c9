//! Reverse-mode automatic differentiation over dense N-dimensional arrays,
//! restricted to the layers a VGG-style pose regressor needs: convolution,
//! 2×2 max pooling, dense, ReLU, flatten and concatenation, plus Adam and a
//! binary checkpoint format.
//!
//! Everything is generic over the storage [`Scalar`]; models train in `f32`
//! and gradient checks run in `f64`.

pub mod checkpoint;
mod error;
pub mod graph;
pub mod ops;
pub mod optim;
mod scalar;
mod tensor;

pub use error::{Result, TensorError};
pub use graph::{Gradients, Graph, GraphBuilder, LayerKind, LayerSpec, Param, Tape};
pub use optim::{adam_step, adam_update, AdamConfig, AdamState, Moments};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;
