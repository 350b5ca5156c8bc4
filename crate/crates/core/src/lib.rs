//! Dual-layer conceptual image codec.
//!
//! An image is carried as a sparse binary edge map (structure) plus a
//! 64-dimensional latent (texture). Both layers are entropy coded into one
//! container; a texture-modulated generator renders the image back.

pub mod arith;
pub mod bitstream;
pub mod error;
pub mod hfgan;
pub mod imagecore;
pub mod structcodec;
pub mod texcodec;
pub mod training;

pub use error::{CodecError, Result};
