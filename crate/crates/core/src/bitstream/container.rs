use crate::error::{CodecError, Result};
use crate::structcodec::StructurePayload;
use crate::texcodec::TexturePayload;

pub const MAGIC: [u8; 4] = *b"CCB1";
pub const VERSION: u8 = 1;
/// Structure layer stored at full resolution (scale 1).
pub const FLAG_FULL_RES_STRUCTURE: u8 = 0b0000_0001;
const KNOWN_FLAGS: u8 = FLAG_FULL_RES_STRUCTURE;
/// Magic, version, height, width, flags.
pub const FIXED_HEADER_LEN: usize = 10;

/// Two-layer container.
///
/// Layout, all integers big-endian:
///
/// | bytes | field |
/// |-------|-------|
/// | 4 | magic `CCB1` |
/// | 1 | version |
/// | 2 | height |
/// | 2 | width |
/// | 1 | flags |
/// | 4 | structure payload length `S` |
/// | S | structure payload |
/// | 4 | texture payload length `T` |
/// | T | texture payload |
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConceptualBitstream {
    pub version: u8,
    pub height: u16,
    pub width: u16,
    pub flags: u8,
    pub structure: StructurePayload,
    pub texture: TexturePayload,
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn shifted(e: CodecError, base: usize) -> CodecError {
    match e {
        CodecError::Decode { offset, msg } => CodecError::Decode { offset: offset + base, msg },
        other => other,
    }
}

impl ConceptualBitstream {
    pub fn full_res_structure(&self) -> bool {
        self.flags & FLAG_FULL_RES_STRUCTURE != 0
    }

    /// Checks header fields against each other and against the payload
    /// headers.
    pub fn validate(&self) -> Result<()> {
        if self.version != VERSION {
            return Err(CodecError::Format(format!("unsupported bitstream version {}", self.version)));
        }
        if self.flags & !KNOWN_FLAGS != 0 {
            return Err(CodecError::Format(format!("reserved flag bits set: {:#010b}", self.flags)));
        }
        let s = &self.structure;
        let scale = if self.full_res_structure() { 1 } else { crate::structcodec::SCALE };
        if s.scale != scale {
            return Err(CodecError::Format(format!("structure scale {} but flags imply {scale}", s.scale)));
        }
        let (sh, sw) = (s.low_h as u32 * s.scale as u32, s.low_w as u32 * s.scale as u32);
        if (sh, sw) != (self.height as u32, self.width as u32) {
            return Err(CodecError::Format(format!(
                "structure layer covers {sh}x{sw}, header declares {}x{}",
                self.height, self.width
            )));
        }
        if self.texture.d == 0 {
            return Err(CodecError::Format("texture latent dimension is zero".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let sb = self.structure.to_bytes();
        let tb = self.texture.to_bytes();
        let mut out = Vec::with_capacity(FIXED_HEADER_LEN + 8 + sb.len() + tb.len());
        out.extend_from_slice(&MAGIC);
        out.push(self.version);
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.width.to_be_bytes());
        out.push(self.flags);
        out.extend_from_slice(&(sb.len() as u32).to_be_bytes());
        out.extend_from_slice(&sb);
        out.extend_from_slice(&(tb.len() as u32).to_be_bytes());
        out.extend_from_slice(&tb);
        out
    }

    /// Parses and validates a container. Magic and version are checked
    /// before anything else is read.
    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        if b.len() < 5 {
            return Err(CodecError::Format(format!("bitstream of {} bytes is too short", b.len())));
        }
        if b[..4] != MAGIC {
            return Err(CodecError::Format(format!("bad magic {:02x?}", &b[..4])));
        }
        if b[4] != VERSION {
            return Err(CodecError::Format(format!("unsupported bitstream version {}", b[4])));
        }
        if b.len() < FIXED_HEADER_LEN + 4 {
            return Err(CodecError::decode(b.len(), "truncated header"));
        }
        let height = u16::from_be_bytes([b[5], b[6]]);
        let width = u16::from_be_bytes([b[7], b[8]]);
        let flags = b[9];
        let s_len = be_u32(b, FIXED_HEADER_LEN) as usize;
        let s_start = FIXED_HEADER_LEN + 4;
        let t_len_at = s_start
            .checked_add(s_len)
            .filter(|&e| e.checked_add(4).is_some_and(|t| t <= b.len()))
            .ok_or_else(|| {
                CodecError::decode(FIXED_HEADER_LEN, format!("structure length {s_len} runs past end of stream"))
            })?;
        let t_len = be_u32(b, t_len_at) as usize;
        let t_start = t_len_at + 4;
        if b.len() - t_start != t_len {
            return Err(CodecError::decode(
                t_len_at,
                format!("texture length {t_len} but {} bytes follow", b.len() - t_start),
            ));
        }
        let structure = StructurePayload::from_bytes(&b[s_start..t_len_at]).map_err(|e| shifted(e, s_start))?;
        let texture = TexturePayload::from_bytes(&b[t_start..]).map_err(|e| shifted(e, t_start))?;
        let bs = ConceptualBitstream { version: b[4], height, width, flags, structure, texture };
        bs.validate()?;
        Ok(bs)
    }

    pub fn byte_len(&self) -> usize {
        FIXED_HEADER_LEN + 8 + self.structure.byte_len() + self.texture.byte_len()
    }

    /// Bits per pixel of the serialized stream over the declared dimensions.
    pub fn bpp(&self) -> f64 {
        bpp(self.byte_len(), self.height as usize, self.width as usize)
    }
}

/// `8 * bytes / (h * w)`.
pub fn bpp(bytes: usize, h: usize, w: usize) -> f64 {
    8.0 * bytes as f64 / (h * w) as f64
}
