//! Bit-level binary arithmetic coder with 32-bit registers.
//!
//! Symbols are coded from cumulative frequency intervals `[lo, hi)` out of
//! `total`; `total` must stay below 2^29. Both sides count renormalization
//! shifts, so the decoder knows the exact number of bits the encoder emitted
//! and can reject streams whose declared length disagrees.

use crate::error::{CodecError, Result};

const TOP: u64 = 0xFFFF_FFFF;
const HALF: u64 = 0x8000_0000;
const QUARTER: u64 = 0x4000_0000;
pub const MAX_TOTAL: u32 = 1 << 29;

/// MSB-first bit sink.
#[derive(Clone, Debug, Default)]
pub struct BitWriter {
    bytes: Vec<u8>,
    nbits: u64,
}

impl BitWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, bit: bool) {
        if self.nbits % 8 == 0 {
            self.bytes.push(0);
        }
        if bit {
            *self.bytes.last_mut().unwrap() |= 0x80 >> (self.nbits % 8);
        }
        self.nbits += 1;
    }

    pub fn put_bits(&mut self, value: u32, count: u32) {
        for i in (0..count).rev() {
            self.put((value >> i) & 1 == 1);
        }
    }

    pub fn bit_len(&self) -> u64 {
        self.nbits
    }

    /// Bytes with the final byte zero-padded.
    pub fn into_bytes(self) -> Vec<u8> {
        self.bytes
    }
}

/// MSB-first bit source limited to a declared bit length; reads past the end
/// yield zeros.
#[derive(Clone, Debug)]
pub struct BitReader<'a> {
    bytes: &'a [u8],
    nbits: u64,
    pos: u64,
}

impl<'a> BitReader<'a> {
    pub fn new(bytes: &'a [u8], nbits: u64) -> Self {
        BitReader { bytes, nbits, pos: 0 }
    }

    pub fn get(&mut self) -> bool {
        let bit = if self.pos < self.nbits {
            let byte = self.bytes[(self.pos / 8) as usize];
            (byte >> (7 - self.pos % 8)) & 1 == 1
        } else {
            false
        };
        self.pos += 1;
        bit
    }

    pub fn get_bits(&mut self, count: u32) -> u32 {
        (0..count).fold(0, |acc, _| (acc << 1) | self.get() as u32)
    }

    pub fn position(&self) -> u64 {
        self.pos
    }
}

pub struct Encoder<'w> {
    low: u64,
    high: u64,
    pending: u64,
    out: &'w mut BitWriter,
}

impl<'w> Encoder<'w> {
    pub fn new(out: &'w mut BitWriter) -> Self {
        Encoder { low: 0, high: TOP, pending: 0, out }
    }

    fn emit(&mut self, bit: bool) {
        self.out.put(bit);
        for _ in 0..self.pending {
            self.out.put(!bit);
        }
        self.pending = 0;
    }

    pub fn encode(&mut self, lo: u32, hi: u32, total: u32) {
        debug_assert!(lo < hi && hi <= total && total <= MAX_TOTAL);
        let range = self.high - self.low + 1;
        self.high = self.low + range * hi as u64 / total as u64 - 1;
        self.low += range * lo as u64 / total as u64;
        loop {
            if self.high < HALF {
                self.emit(false);
            } else if self.low >= HALF {
                self.emit(true);
                self.low -= HALF;
                self.high -= HALF;
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.pending += 1;
                self.low -= QUARTER;
                self.high -= QUARTER;
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
        }
    }

    /// Flushes two disambiguating bits plus any pending bits.
    pub fn finish(mut self) {
        self.pending += 1;
        let bit = self.low >= QUARTER;
        self.emit(bit);
    }
}

pub struct Decoder<'a> {
    low: u64,
    high: u64,
    value: u64,
    shifts: u64,
    start: u64,
    input: BitReader<'a>,
}

impl<'a> Decoder<'a> {
    pub fn new(bytes: &'a [u8], nbits: u64) -> Self {
        Self::from_reader(BitReader::new(bytes, nbits))
    }

    /// Starts decoding at the reader's current position, e.g. after raw
    /// prefix bits.
    pub fn from_reader(mut input: BitReader<'a>) -> Self {
        let start = input.position();
        let value = input.get_bits(32) as u64;
        Decoder { low: 0, high: TOP, value, shifts: 0, start, input }
    }

    /// Cumulative count selecting the next symbol.
    pub fn target(&self, total: u32) -> Result<u32> {
        if self.value < self.low || self.value > self.high {
            return Err(self.corrupt());
        }
        let range = self.high - self.low + 1;
        let t = ((self.value - self.low + 1) * total as u64 - 1) / range;
        if t >= total as u64 {
            return Err(self.corrupt());
        }
        Ok(t as u32)
    }

    pub fn consume(&mut self, lo: u32, hi: u32, total: u32) {
        let range = self.high - self.low + 1;
        self.high = self.low + range * hi as u64 / total as u64 - 1;
        self.low += range * lo as u64 / total as u64;
        loop {
            if self.high < HALF {
            } else if self.low >= HALF {
                self.low -= HALF;
                self.high -= HALF;
                self.value = self.value.wrapping_sub(HALF);
            } else if self.low >= QUARTER && self.high < HALF + QUARTER {
                self.low -= QUARTER;
                self.high -= QUARTER;
                self.value = self.value.wrapping_sub(QUARTER);
            } else {
                break;
            }
            self.low <<= 1;
            self.high = (self.high << 1) | 1;
            self.value = ((self.value << 1) | self.input.get() as u64) & TOP;
            self.shifts += 1;
        }
    }

    /// Bit count the encoder produced for the symbols decoded so far,
    /// including any raw prefix.
    pub fn encoded_len(&self) -> u64 {
        self.start + self.shifts + 2
    }

    /// Approximate byte offset of the read head, for diagnostics.
    pub fn byte_offset(&self) -> usize {
        (self.input.position().saturating_sub(32) / 8) as usize
    }

    fn corrupt(&self) -> CodecError {
        CodecError::decode(self.byte_offset(), "arithmetic-coded data is inconsistent")
    }
}

/// Adaptive binary probability with counts starting at (1,1) and halved
/// once their sum exceeds 2^13.
#[derive(Clone, Copy, Debug)]
pub struct BinaryContext {
    counts: [u32; 2],
}

impl Default for BinaryContext {
    fn default() -> Self {
        BinaryContext { counts: [1, 1] }
    }
}

impl BinaryContext {
    const LIMIT: u32 = 1 << 13;

    fn update(&mut self, bit: bool) {
        self.counts[bit as usize] += 1;
        if self.counts[0] + self.counts[1] > Self::LIMIT {
            self.counts[0] = self.counts[0].div_ceil(2);
            self.counts[1] = self.counts[1].div_ceil(2);
        }
    }

    pub fn encode(&mut self, enc: &mut Encoder<'_>, bit: bool) {
        let [c0, c1] = self.counts;
        if bit {
            enc.encode(c0, c0 + c1, c0 + c1);
        } else {
            enc.encode(0, c0, c0 + c1);
        }
        self.update(bit);
    }

    pub fn decode(&mut self, dec: &mut Decoder<'_>) -> Result<bool> {
        let [c0, c1] = self.counts;
        let total = c0 + c1;
        let bit = dec.target(total)? >= c0;
        if bit {
            dec.consume(c0, total, total);
        } else {
            dec.consume(0, c0, total);
        }
        self.update(bit);
        Ok(bit)
    }
}
