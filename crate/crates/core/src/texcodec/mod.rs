//! Texture layer: variational encoder, scalar quantization and static-prior
//! arithmetic coding of the latent.

mod encoder;
mod entropy;
mod quant;

pub use encoder::{
    encode_texture, image_tensor, sample_latent, PosteriorGaussian, TextureEncoder, ENCODER_CHANNELS, LOGVAR_LIMIT,
};
pub use entropy::{entropy_decode, entropy_encode, TextureModel, TexturePayload, MAX_BIN};
pub use quant::{dequantize, q_step, quantize, quantize_with_step, QuantizedTexture, MAX_QP, SCALE_LOG2};

/// Default latent dimension.
pub const LATENT_DIM: usize = 64;
/// Default quantization parameter.
pub const DEFAULT_QP: u8 = 51;
