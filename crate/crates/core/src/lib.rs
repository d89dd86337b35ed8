//! Doughnut-kernel pattern attention.
//!
//! A doughnut kernel reads a wide *sensor* region of the feature grid and
//! writes only a smaller central *update core*. Cores of all kernels in a
//! pattern partition the grid while sensors overlap, which gives
//! convolution-like locality with attention inside each kernel.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at
//! the crate root fix the common choices.

pub mod attention;
pub mod autograd;
pub mod error;
pub mod geometry;
pub mod model;
pub mod pattern;
pub mod scalar;
pub mod tensor;
pub mod training;

pub use autograd::{Gradients, Graph, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor32 = Tensor<f32>;
pub type Tensor64 = Tensor<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
