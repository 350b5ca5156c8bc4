//! Lossless coding of downsampled structural maps and learned 4x restoration.

mod edgesr;

use crate::arith::{BinaryContext, BitWriter, Decoder, Encoder};
use crate::error::{CodecError, Result};
use crate::imagecore::StructuralMap;

pub use edgesr::{bce_loss, sr_upsample, EdgeSrModel, EdgeSrTrainConfig, ESR_MAGIC};
pub(crate) use edgesr::with_path;

/// Fixed structure downsampling factor.
pub const SCALE: u8 = 4;

const HEADER_LEN: usize = 9;
const CONTEXT_BITS: usize = 10;

/// Transport form of a downsampled structural map.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructurePayload {
    pub low_h: u16,
    pub low_w: u16,
    pub scale: u8,
    pub bit_len: u32,
    pub bits: Vec<u8>,
}

impl StructurePayload {
    /// Big-endian: u16 low_h, u16 low_w, u8 scale, u32 bit length, coded bits
    /// padded to a byte boundary.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len());
        out.extend_from_slice(&self.low_h.to_be_bytes());
        out.extend_from_slice(&self.low_w.to_be_bytes());
        out.push(self.scale);
        out.extend_from_slice(&self.bit_len.to_be_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::decode(
                bytes.len(),
                format!("structure header needs {HEADER_LEN} bytes, got {}", bytes.len()),
            ));
        }
        let low_h = u16::from_be_bytes([bytes[0], bytes[1]]);
        let low_w = u16::from_be_bytes([bytes[2], bytes[3]]);
        let scale = bytes[4];
        let bit_len = u32::from_be_bytes([bytes[5], bytes[6], bytes[7], bytes[8]]);
        let need = (bit_len as usize).div_ceil(8);
        let have = bytes.len() - HEADER_LEN;
        if have != need {
            return Err(CodecError::decode(
                HEADER_LEN + have.min(need),
                format!("structure bit length {bit_len} needs {need} bytes, payload has {have}"),
            ));
        }
        Ok(StructurePayload { low_h, low_w, scale, bit_len, bits: bytes[HEADER_LEN..].to_vec() })
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.bits.len()
    }
}

// Causal template: three pixels two rows up, five one row up, two to the left.
fn context(m: &[u8], w: usize, y: usize, x: usize) -> usize {
    let at = |dy: usize, dx: isize| -> usize {
        if y < dy {
            return 0;
        }
        let xx = x as isize + dx;
        if xx < 0 || xx >= w as isize {
            return 0;
        }
        m[(y - dy) * w + xx as usize] as usize
    };
    let mut c = 0;
    for dx in -1..=1 {
        c = (c << 1) | at(2, dx);
    }
    for dx in -2..=2 {
        c = (c << 1) | at(1, dx);
    }
    for dx in [-2, -1] {
        c = (c << 1) | at(0, dx);
    }
    c
}

/// Context-adaptive arithmetic coding of a binary map in raster order.
pub fn encode_map(map: &StructuralMap) -> Result<StructurePayload> {
    let (h, w) = (map.height(), map.width());
    if h > u16::MAX as usize || w > u16::MAX as usize {
        return Err(CodecError::Argument(format!("map {h}x{w} exceeds 16-bit dimensions")));
    }
    let mut ctx = vec![BinaryContext::default(); 1 << CONTEXT_BITS];
    let mut out = BitWriter::new();
    let mut enc = Encoder::new(&mut out);
    let m = map.data();
    for y in 0..h {
        for x in 0..w {
            ctx[context(m, w, y, x)].encode(&mut enc, m[y * w + x] == 1);
        }
    }
    enc.finish();
    let bit_len = u32::try_from(out.bit_len())
        .map_err(|_| CodecError::Argument("structure payload exceeds 2^32 bits".into()))?;
    Ok(StructurePayload { low_h: h as u16, low_w: w as u16, scale: SCALE, bit_len, bits: out.into_bytes() })
}

/// Exact inverse of [`encode_map`].
pub fn decode_map(p: &StructurePayload) -> Result<StructuralMap> {
    let (h, w) = (p.low_h as usize, p.low_w as usize);
    if h == 0 || w == 0 {
        return Err(CodecError::decode(0, "structure dimensions must be non-zero"));
    }
    if p.bits.len() != (p.bit_len as usize).div_ceil(8) {
        return Err(CodecError::decode(
            HEADER_LEN,
            format!("bit length {} disagrees with {} payload bytes", p.bit_len, p.bits.len()),
        ));
    }
    let mut ctx = vec![BinaryContext::default(); 1 << CONTEXT_BITS];
    let mut dec = Decoder::new(&p.bits, p.bit_len as u64);
    let mut m = vec![0u8; h * w];
    for y in 0..h {
        for x in 0..w {
            let c = context(&m, w, y, x);
            m[y * w + x] = ctx[c].decode(&mut dec).map_err(|e| offset_by(e, HEADER_LEN))? as u8;
        }
    }
    if dec.encoded_len() != p.bit_len as u64 {
        return Err(CodecError::decode(
            HEADER_LEN + dec.byte_offset(),
            format!(
                "decoding {h}x{w} symbols consumed {} bits, header declares {}",
                dec.encoded_len(),
                p.bit_len
            ),
        ));
    }
    StructuralMap::new(h, w, m)
}

fn offset_by(e: CodecError, base: usize) -> CodecError {
    match e {
        CodecError::Decode { offset, msg } => CodecError::Decode { offset: offset + base, msg },
        other => other,
    }
}
