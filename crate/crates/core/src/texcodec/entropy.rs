//! Static-prior arithmetic coding of quantized texture symbols.
//!
//! Symbols `q` in `[-1023, 1023]` are coded with the mass that a standard
//! normal assigns to `[q*step, (q+1)*step)`; anything else goes through an
//! escape symbol followed by 16 raw bits. A leading mode bit selects plain
//! 16-bit packing whenever that is shorter, which bounds a `d`-symbol
//! payload by `16*d + 1` bits.

use super::quant::{q_step, QuantizedTexture};
use crate::arith::{BitReader, BitWriter, Decoder, Encoder};
use crate::error::{CodecError, Result};

pub const MAX_BIN: i32 = 1023;
const NUM_BINS: usize = 2 * MAX_BIN as usize + 1;
const ESCAPE: usize = NUM_BINS;
const FREQ_BUDGET: u64 = 1 << 22;
const RAW_TOTAL: u32 = 1 << 16;
const HEADER_LEN: usize = 7;

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn std_normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Discretized N(0,1) over the bins of one quantization step.
#[derive(Clone, Debug)]
pub struct TextureModel {
    probs: Vec<f64>,
    cum: Vec<u32>,
}

impl TextureModel {
    pub fn new(qp: u8) -> Result<Self> {
        let step = q_step(qp)?;
        let mut probs = Vec::with_capacity(NUM_BINS + 1);
        for q in -MAX_BIN..=MAX_BIN {
            let (a, b) = (q as f64 * step, (q + 1) as f64 * step);
            // Difference on the side with better relative precision.
            let p = if a >= 0.0 { std_normal_sf(a) - std_normal_sf(b) } else { std_normal_cdf(b) - std_normal_cdf(a) };
            probs.push(p.max(0.0));
        }
        probs.push(std_normal_cdf(-MAX_BIN as f64 * step) + std_normal_sf((MAX_BIN + 1) as f64 * step));
        let spread = FREQ_BUDGET - probs.len() as u64;
        let mut cum = Vec::with_capacity(probs.len() + 1);
        cum.push(0u32);
        let mut acc = 0u64;
        for &p in &probs {
            acc += 1 + (p * spread as f64).floor() as u64;
            cum.push(acc as u32);
        }
        debug_assert!(acc <= FREQ_BUDGET);
        Ok(TextureModel { probs, cum })
    }

    /// Model probabilities of every bin (ascending `q`) followed by escape.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    fn total(&self) -> u32 {
        *self.cum.last().unwrap()
    }

    fn interval(&self, sym: usize) -> (u32, u32) {
        (self.cum[sym], self.cum[sym + 1])
    }

    fn lookup(&self, target: u32) -> usize {
        self.cum.partition_point(|&c| c <= target) - 1
    }
}

fn symbol_of(q: i16) -> usize {
    let q = q as i32;
    if (-MAX_BIN..=MAX_BIN).contains(&q) {
        (q + MAX_BIN) as usize
    } else {
        ESCAPE
    }
}

/// Texture payload: big-endian u16 `d`, u8 `qp`, u32 bit length, coded bits.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TexturePayload {
    pub d: u16,
    pub qp: u8,
    pub bit_len: u32,
    pub bits: Vec<u8>,
}

impl TexturePayload {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len());
        out.extend_from_slice(&self.d.to_be_bytes());
        out.push(self.qp);
        out.extend_from_slice(&self.bit_len.to_be_bytes());
        out.extend_from_slice(&self.bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(CodecError::decode(
                bytes.len(),
                format!("texture header needs {HEADER_LEN} bytes, got {}", bytes.len()),
            ));
        }
        let d = u16::from_be_bytes([bytes[0], bytes[1]]);
        let qp = bytes[2];
        let bit_len = u32::from_be_bytes([bytes[3], bytes[4], bytes[5], bytes[6]]);
        let need = (bit_len as usize).div_ceil(8);
        let have = bytes.len() - HEADER_LEN;
        if have != need {
            return Err(CodecError::decode(
                HEADER_LEN + have.min(need),
                format!("texture bit length {bit_len} needs {need} bytes, payload has {have}"),
            ));
        }
        Ok(TexturePayload { d, qp, bit_len, bits: bytes[HEADER_LEN..].to_vec() })
    }

    pub fn byte_len(&self) -> usize {
        HEADER_LEN + self.bits.len()
    }
}

/// Losslessly codes `qt`.
pub fn entropy_encode(qt: &QuantizedTexture) -> Result<TexturePayload> {
    let d = u16::try_from(qt.q.len()).map_err(|_| CodecError::Argument("latent longer than 65535".into()))?;
    let model = TextureModel::new(qt.qp)?;
    let mut w = BitWriter::new();
    w.put(false);
    let mut enc = Encoder::new(&mut w);
    let total = model.total();
    for &q in &qt.q {
        let sym = symbol_of(q);
        let (lo, hi) = model.interval(sym);
        enc.encode(lo, hi, total);
        if sym == ESCAPE {
            let raw = q as u16 as u32;
            enc.encode(raw, raw + 1, RAW_TOTAL);
        }
    }
    enc.finish();
    let raw_len = 1 + 16 * qt.q.len() as u64;
    let (bit_len, bits) = if w.bit_len() <= raw_len {
        (w.bit_len(), w.into_bytes())
    } else {
        let mut raw = BitWriter::new();
        raw.put(true);
        for &q in &qt.q {
            raw.put_bits(q as u16 as u32, 16);
        }
        (raw.bit_len(), raw.into_bytes())
    };
    Ok(TexturePayload { d, qp: qt.qp, bit_len: bit_len as u32, bits })
}

/// Exact inverse of [`entropy_encode`].
pub fn entropy_decode(p: &TexturePayload) -> Result<QuantizedTexture> {
    let model = TextureModel::new(p.qp).map_err(|e| CodecError::decode(2, e.to_string()))?;
    if p.bits.len() != (p.bit_len as usize).div_ceil(8) || p.bit_len == 0 {
        return Err(CodecError::decode(
            HEADER_LEN,
            format!("texture bit length {} disagrees with {} payload bytes", p.bit_len, p.bits.len()),
        ));
    }
    let d = p.d as usize;
    let mut r = BitReader::new(&p.bits, p.bit_len as u64);
    let q = if r.get() {
        if p.bit_len as u64 != 1 + 16 * d as u64 {
            return Err(CodecError::decode(
                HEADER_LEN,
                format!("raw texture of {d} symbols must be {} bits, header says {}", 1 + 16 * d, p.bit_len),
            ));
        }
        (0..d).map(|_| r.get_bits(16) as u16 as i16).collect()
    } else {
        let mut dec = Decoder::from_reader(r);
        let total = model.total();
        let mut q = Vec::with_capacity(d);
        for _ in 0..d {
            let t = dec.target(total).map_err(|e| shift(e))?;
            let sym = model.lookup(t);
            let (lo, hi) = model.interval(sym);
            dec.consume(lo, hi, total);
            if sym == ESCAPE {
                let raw = dec.target(RAW_TOTAL).map_err(|e| shift(e))?;
                dec.consume(raw, raw + 1, RAW_TOTAL);
                let v = raw as u16 as i16;
                if (-MAX_BIN..=MAX_BIN).contains(&(v as i32)) {
                    return Err(CodecError::decode(HEADER_LEN + dec.byte_offset(), "escaped value inside model range"));
                }
                q.push(v);
            } else {
                q.push((sym as i32 - MAX_BIN) as i16);
            }
        }
        if dec.encoded_len() != p.bit_len as u64 {
            return Err(CodecError::decode(
                HEADER_LEN + dec.byte_offset(),
                format!("texture symbols span {} bits, header declares {}", dec.encoded_len(), p.bit_len),
            ));
        }
        q
    };
    Ok(QuantizedTexture { q, qp: p.qp })
}

fn shift(e: CodecError) -> CodecError {
    match e {
        CodecError::Decode { offset, msg } => CodecError::Decode { offset: offset + HEADER_LEN, msg },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(q: Vec<i16>, qp: u8) -> TexturePayload {
        let qt = QuantizedTexture { q, qp };
        let p = entropy_encode(&qt).unwrap();
        let parsed = TexturePayload::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(entropy_decode(&parsed).unwrap(), qt);
        p
    }

    #[test]
    fn probabilities_sum_to_one() {
        for qp in [0u8, 4, 20, 37, 51] {
            let m = TextureModel::new(qp).unwrap();
            let s: f64 = m.probabilities().iter().sum();
            assert!((s - 1.0).abs() < 1e-9, "qp {qp}: {s}");
            assert!(m.total() as u64 <= FREQ_BUDGET);
        }
    }

    #[test]
    fn zero_vector_is_cheap() {
        let p = roundtrip(vec![0; 64], 51);
        assert!(p.bit_len < 64 * 16, "{}", p.bit_len);
        assert_eq!(p.bits[0] & 0x80, 0, "arithmetic mode expected");
    }

    #[test]
    fn escape_values_roundtrip() {
        let mut q = vec![0i16; 64];
        q[3] = 30000;
        q[10] = -32768;
        q[11] = 32767;
        q[12] = 1024;
        q[13] = -1024;
        q[14] = 1023;
        q[15] = -1023;
        roundtrip(q, 51);
    }

    #[test]
    fn adversarial_symbols_fall_back_to_raw() {
        let q: Vec<i16> = (0..64).map(|i| if i % 2 == 0 { 30000 } else { -30000 }).collect();
        let p = roundtrip(q, 51);
        assert_eq!(p.bit_len, 1 + 64 * 16);
    }

    #[test]
    fn corrupt_length_is_rejected() {
        let p = entropy_encode(&QuantizedTexture { q: vec![1, -2, 3, 0], qp: 30 }).unwrap();
        let mut bad = p.clone();
        bad.bit_len += 8;
        bad.bits.push(0);
        assert!(entropy_decode(&bad).is_err());
        let bytes = p.to_bytes();
        assert!(TexturePayload::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn roundtrip_any(q in proptest::collection::vec(any::<i16>(), 0..80), qp in 0u8..=51) {
            let p = roundtrip(q.clone(), qp);
            prop_assert!(p.bit_len as usize <= 1 + 16 * q.len().max(1) + 1);
            let again = entropy_encode(&QuantizedTexture { q, qp }).unwrap();
            prop_assert_eq!(again, p);
        }

        #[test]
        fn roundtrip_gaussian_like(q in proptest::collection::vec(-40i16..40, 64), qp in 30u8..=51) {
            roundtrip(q, qp);
        }
    }
}
