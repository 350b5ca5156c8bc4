//! Minimal CPU tensor library with reverse-mode autodiff, convolution layers,
//! Adam and a versioned weight archive.
//!
//! Everything is generic over [`Scalar`] so networks train in `f32` while
//! gradient checks run the same code in `f64`.

pub mod archive;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod params;
mod scalar;
mod tensor;

pub use archive::Archive;
pub use error::{NnError, Result};
pub use graph::{Gradients, Graph, Var};
pub use layers::{Conv2d, Linear, LRELU_SLOPE};
pub use params::{Adam, AdamConfig, ParamId, ParamStore, StoreGrads};
pub use scalar::Scalar;
pub use tensor::Tensor;
