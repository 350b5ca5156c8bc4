//! The two-layer container and the end-to-end compress/decompress pipeline,
//! plus compressed-domain manipulation.

mod container;

use std::path::Path;

pub use container::{bpp, ConceptualBitstream, FIXED_HEADER_LEN, FLAG_FULL_RES_STRUCTURE, MAGIC, VERSION};

use crate::error::{CodecError, Result};
use crate::hfgan::HfganCheckpoint;
use crate::imagecore::{binarize, extract_edges, lanczos_resample, EdgeParams, Image, StructuralMap};
use crate::structcodec::{decode_map, encode_map, sr_upsample, EdgeSrModel, SCALE};
use crate::texcodec::{dequantize, entropy_decode, entropy_encode, quantize, QuantizedTexture, DEFAULT_QP};

pub const EDGE_SR_FILE: &str = "edgesr.ckpt";
pub const HFGAN_FILE: &str = "hfgan.ckpt";

/// Encoder-side and decoder-side knobs that are not stored in weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecSettings {
    pub edge: EdgeParams,
    /// Binarization level after Lanczos downsampling of the edge map.
    pub down_threshold: f64,
    /// Binarization level of the upsampler's probabilities.
    pub sr_threshold: f64,
    pub qp: u8,
    pub full_res_structure: bool,
}

impl Default for CodecSettings {
    fn default() -> Self {
        CodecSettings {
            edge: EdgeParams::default(),
            down_threshold: 0.1,
            sr_threshold: 0.5,
            qp: DEFAULT_QP,
            full_res_structure: false,
        }
    }
}

/// Trained weights needed by both codec directions.
#[derive(Clone, Debug)]
pub struct Models {
    pub edge_sr: EdgeSrModel,
    pub hfgan: HfganCheckpoint,
}

impl Models {
    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Models {
            edge_sr: EdgeSrModel::load(&dir.join(EDGE_SR_FILE))?,
            hfgan: HfganCheckpoint::load(&dir.join(HFGAN_FILE))?,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CodecError::io(dir, e))?;
        self.edge_sr.save(&dir.join(EDGE_SR_FILE))?;
        self.hfgan.save(&dir.join(HFGAN_FILE))
    }

    pub fn image_size(&self) -> usize {
        self.hfgan.generator.cfg.output_size()
    }
}

/// Transport-resolution structure of a full-resolution map.
pub fn downsample_map(map: &StructuralMap, settings: &CodecSettings) -> Result<StructuralMap> {
    if settings.full_res_structure {
        return Ok(map.clone());
    }
    let s = SCALE as usize;
    if map.height() % s != 0 || map.width() % s != 0 {
        return Err(CodecError::Argument(format!(
            "map {}x{} is not divisible by the structure scale {s}",
            map.height(),
            map.width()
        )));
    }
    Ok(binarize(&lanczos_resample(&map.to_raster(), 1, s)?, settings.down_threshold))
}

/// Edge extraction followed by transport downsampling.
pub fn structure_of(img: &Image, settings: &CodecSettings) -> Result<StructuralMap> {
    downsample_map(&extract_edges(img, &settings.edge)?, settings)
}

/// Full-resolution map the decoder renders from.
pub fn restore_structure(
    low: &StructuralMap,
    full_res: bool,
    models: &Models,
    settings: &CodecSettings,
) -> Result<StructuralMap> {
    if full_res {
        Ok(low.clone())
    } else {
        sr_upsample(&models.edge_sr, low, settings.sr_threshold)
    }
}

fn check_dims(img: &Image, models: &Models) -> Result<()> {
    let n = models.image_size();
    if img.height() != n || img.width() != n {
        return Err(CodecError::Config(format!(
            "models handle {n}x{n} images, input is {}x{}",
            img.height(),
            img.width()
        )));
    }
    Ok(())
}

/// Quantized posterior mean of the texture encoder.
pub fn texture_of(img: &Image, models: &Models, qp: u8) -> Result<QuantizedTexture> {
    let post = models.hfgan.encoder.encode(img)?;
    Ok(quantize(&post.mu, qp)?.0)
}

/// Deterministic compression: posterior mean latent, Canny structure.
pub fn compress(img: &Image, models: &Models, settings: &CodecSettings) -> Result<ConceptualBitstream> {
    check_dims(img, models)?;
    let low = structure_of(img, settings)?;
    let structure = encode_map(&low)?;
    let texture = entropy_encode(&texture_of(img, models, settings.qp)?)?;
    let flags = if settings.full_res_structure { FLAG_FULL_RES_STRUCTURE } else { 0 };
    Ok(ConceptualBitstream {
        version: VERSION,
        height: img.height() as u16,
        width: img.width() as u16,
        flags,
        structure,
        texture,
    })
}

/// Lossless decode of both layers without rendering.
pub fn decode_layers(bs: &ConceptualBitstream) -> Result<(StructuralMap, QuantizedTexture)> {
    bs.validate()?;
    Ok((decode_map(&bs.structure)?, entropy_decode(&bs.texture)?))
}

/// Structure decode, upsampling, dequantization and generation.
pub fn decompress(bs: &ConceptualBitstream, models: &Models, settings: &CodecSettings) -> Result<Image> {
    let (low, qt) = decode_layers(bs)?;
    let n = models.image_size();
    if (bs.height as usize, bs.width as usize) != (n, n) {
        return Err(CodecError::Config(format!(
            "stream is {}x{}, models render {n}x{n}",
            bs.height, bs.width
        )));
    }
    let d = models.hfgan.generator.cfg.latent_dim;
    if qt.q.len() != d {
        return Err(CodecError::Format(format!("stream latent has {} dims, generator expects {d}", qt.q.len())));
    }
    let map = restore_structure(&low, bs.full_res_structure(), models, settings)?;
    let z: Vec<f32> = dequantize(&qt)?.into_iter().map(|v| v as f32).collect();
    models.hfgan.generator.generate(&z, &map)
}

/// `a`'s structure with `b`'s texture; no re-encoding.
pub fn swap_texture(a: &ConceptualBitstream, b: &ConceptualBitstream) -> Result<ConceptualBitstream> {
    if a.version != b.version || a.texture.d != b.texture.d || a.texture.qp != b.texture.qp {
        return Err(CodecError::Argument(format!(
            "incompatible streams: version {}/{}, d {}/{}, qp {}/{}",
            a.version, b.version, a.texture.d, b.texture.d, a.texture.qp, b.texture.qp
        )));
    }
    Ok(ConceptualBitstream { texture: b.texture.clone(), ..a.clone() })
}

/// Re-encodes only the structure layer from an edited full-resolution map.
pub fn replace_structure(
    bs: &ConceptualBitstream,
    edited: &StructuralMap,
    settings: &CodecSettings,
) -> Result<ConceptualBitstream> {
    if (edited.height(), edited.width()) != (bs.height as usize, bs.width as usize) {
        return Err(CodecError::Argument(format!(
            "edited map is {}x{}, stream is {}x{}",
            edited.height(),
            edited.width(),
            bs.height,
            bs.width
        )));
    }
    let s = CodecSettings { full_res_structure: bs.full_res_structure(), ..*settings };
    let structure = encode_map(&downsample_map(edited, &s)?)?;
    Ok(ConceptualBitstream { structure, ..bs.clone() })
}

#[cfg(test)]
mod tests;
