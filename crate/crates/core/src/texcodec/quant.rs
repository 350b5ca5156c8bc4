use crate::error::{CodecError, Result};

pub const MAX_QP: u8 = 51;
/// log2 of the step normalization factor.
pub const SCALE_LOG2: i32 = 10;

// 2^(r/6) for r in 0..6.
fn fractional_octave(r: i32) -> f64 {
    (r as f64 / 6.0).exp2()
}

/// `2^((qp-4)/6 - 10)`. Computed as an exact power of two times `2^(r/6)`,
/// so `q_step(qp + 6) == 2 * q_step(qp)` holds bit for bit.
pub fn q_step(qp: u8) -> Result<f64> {
    if qp > MAX_QP {
        return Err(CodecError::Argument(format!("qp {qp} outside [0, {MAX_QP}]")));
    }
    let e = qp as i32 - 4;
    let (octave, r) = (e.div_euclid(6), e.rem_euclid(6));
    Ok(fractional_octave(r) * 2f64.powi(octave - SCALE_LOG2))
}

/// Integer texture symbols with their quantization parameter.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedTexture {
    pub q: Vec<i16>,
    pub qp: u8,
}

impl QuantizedTexture {
    pub fn scale_log2(&self) -> i32 {
        SCALE_LOG2
    }
}

/// `floor(z / step)` clamped to the signed 16-bit range. Returns the symbols
/// and how many coordinates were clamped.
pub fn quantize(z: &[f32], qp: u8) -> Result<(QuantizedTexture, usize)> {
    let (q, overflows) = quantize_with_step(z, q_step(qp)?);
    Ok((QuantizedTexture { q, qp }, overflows))
}

/// [`quantize`] for an arbitrary positive step.
pub fn quantize_with_step(z: &[f32], step: f64) -> (Vec<i16>, usize) {
    let mut overflows = 0;
    let q = z
        .iter()
        .map(|&v| {
            let v = v as f64;
            if !v.is_finite() {
                overflows += 1;
                return if v > 0.0 { i16::MAX } else { i16::MIN };
            }
            let mut q = (v / step).floor();
            // Division rounding can land one bin off; restore 0 <= v - q*step < step.
            if v - q * step < 0.0 {
                q -= 1.0;
            } else if v - q * step >= step {
                q += 1.0;
            }
            if q < i16::MIN as f64 || q > i16::MAX as f64 {
                overflows += 1;
            }
            q.clamp(i16::MIN as f64, i16::MAX as f64) as i16
        })
        .collect();
    (q, overflows)
}

/// `q * step` per coordinate.
pub fn dequantize(qt: &QuantizedTexture) -> Result<Vec<f64>> {
    let step = q_step(qt.qp)?;
    Ok(qt.q.iter().map(|&q| q as f64 * step).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_examples() {
        assert_eq!(q_step(4).unwrap(), 0.0009765625);
        assert_eq!(q_step(10).unwrap(), 0.001953125);
        // 2^(47/6 - 10) = 2^(-13/6), evaluated to 40 digits
        let exact = 0.222_724_679_535_084_826_185_056_551_397_628_127_f64;
        assert!((q_step(51).unwrap() - exact).abs() < 1e-15);
        assert!(q_step(52).is_err());
    }

    #[test]
    fn step_doubles_every_six_and_increases() {
        for qp in 0..=45u8 {
            assert_eq!(q_step(qp + 6).unwrap(), 2.0 * q_step(qp).unwrap());
        }
        for qp in 0..51u8 {
            assert!(q_step(qp + 1).unwrap() > q_step(qp).unwrap());
        }
    }

    #[test]
    fn floor_semantics() {
        let (q, _) = quantize(&[0.5], 4).unwrap();
        assert_eq!(q.q, vec![512]);
        assert_eq!(quantize_with_step(&[-0.3], 0.25).0, vec![-2]);
        let back = dequantize(&QuantizedTexture { q: vec![512; 3], qp: 4 }).unwrap();
        assert_eq!(back, vec![0.5; 3]);
        assert_eq!(dequantize(&QuantizedTexture { q: vec![0; 64], qp: 51 }).unwrap(), vec![0.0; 64]);
    }

    #[test]
    fn clamps_and_counts_overflow() {
        let (q, n) = quantize(&[100.0, -100.0, 0.0], 0).unwrap();
        assert_eq!(q.q, vec![i16::MAX, i16::MIN, 0]);
        assert_eq!(n, 2);
    }

    proptest! {
        #[test]
        fn error_is_one_sided(z in proptest::collection::vec(-50.0f32..50.0, 1..64), qp in 0u8..=51) {
            let (qt, overflows) = quantize(&z, qp).unwrap();
            let step = q_step(qp).unwrap();
            let back = dequantize(&qt).unwrap();
            for (i, (&v, &b)) in z.iter().zip(&back).enumerate() {
                let in_range = (v as f64 / step).abs() < 32000.0;
                if in_range {
                    let e = v as f64 - qt.q[i] as f64 * step;
                    prop_assert!((0.0..step).contains(&e));
                    prop_assert!((v as f64 - b).abs() < step);
                }
            }
            prop_assert!(overflows <= z.len());
        }
    }
}
