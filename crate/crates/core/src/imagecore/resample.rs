use std::f64::consts::PI;

use super::Raster;
use crate::error::{CodecError, Result};

const LOBES: f64 = 3.0;

/// Lanczos-3 window: `sinc(x) * sinc(x/3)` on `|x| < 3`.
pub fn lanczos_kernel(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= LOBES {
        return 0.0;
    }
    let px = PI * x;
    LOBES * px.sin() * (px / LOBES).sin() / (px * px)
}

/// Per-output-sample taps `(first input index, weights)`.
///
/// Output sample `o` sits at input coordinate `o * den / num` (grid corners
/// aligned). Downsampling widens the kernel by the scale factor. Taps falling
/// outside the input are dropped and the rest renormalized.
fn axis_taps(n_in: usize, n_out: usize, num: usize, den: usize) -> Vec<(usize, Vec<f64>)> {
    let ratio = den as f64 / num as f64;
    let support = ratio.max(1.0);
    (0..n_out)
        .map(|o| {
            let center = o as f64 * ratio;
            let lo = ((center - LOBES * support).floor() as isize + 1).max(0) as usize;
            let hi = ((center + LOBES * support).ceil() as isize - 1).min(n_in as isize - 1) as usize;
            let mut w: Vec<f64> = (lo..=hi).map(|j| lanczos_kernel((j as f64 - center) / support)).collect();
            let sum: f64 = w.iter().sum();
            if sum.abs() > 1e-12 {
                w.iter_mut().for_each(|v| *v /= sum);
            }
            (lo, w)
        })
        .collect()
}

fn target(n: usize, num: usize, den: usize, axis: &str) -> Result<usize> {
    if num == 0 || den == 0 || (n * num) % den != 0 || n * num / den == 0 {
        return Err(CodecError::Argument(format!(
            "{axis} {n} scaled by {num}/{den} is not a positive integer"
        )));
    }
    Ok(n * num / den)
}

/// Separable Lanczos-3 resampling of every channel by `num/den`, clamped to
/// the input's value range.
pub fn lanczos_resample(data: &Raster, num: usize, den: usize) -> Result<Raster> {
    let oh = target(data.height, num, den, "height")?;
    let ow = target(data.width, num, den, "width")?;
    if num == den {
        return Ok(data.clone());
    }
    let (lo, hi) = data
        .data
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let ty = axis_taps(data.height, oh, num, den);
    let tx = axis_taps(data.width, ow, num, den);
    let w = data.width;
    let mut out = Vec::with_capacity(data.channels * oh * ow);
    let mut rows = vec![0.0; oh * w];
    for c in 0..data.channels {
        let plane = data.plane(c);
        for (oy, (start, wy)) in ty.iter().enumerate() {
            let dst = &mut rows[oy * w..(oy + 1) * w];
            dst.fill(0.0);
            for (k, &wk) in wy.iter().enumerate() {
                let src = &plane[(start + k) * w..(start + k + 1) * w];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += wk * s;
                }
            }
        }
        for oy in 0..oh {
            let row = &rows[oy * w..(oy + 1) * w];
            for (start, wx) in &tx {
                let v: f64 = wx.iter().zip(&row[*start..]).map(|(a, b)| a * b).sum();
                out.push(v.clamp(lo, hi));
            }
        }
    }
    Raster::new(data.channels, oh, ow, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sinc(x: f64) -> f64 {
        if x == 0.0 {
            1.0
        } else {
            (PI * x).sin() / (PI * x)
        }
    }

    #[test]
    fn kernel_matches_sinc_product() {
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let want = if x.abs() < 3.0 { sinc(x) * sinc(x / 3.0) } else { 0.0 };
            assert!((lanczos_kernel(x) - want).abs() < 1e-12, "x={x}");
        }
    }

    #[test]
    fn impulse_upsampled_gives_half_integer_kernel_samples() {
        let row = Raster::new(1, 1, 7, vec![0., 0., 0., 1., 0., 0., 0.]).unwrap();
        // width doubles; height 1 -> 2 so both axes scale
        let out = lanczos_resample(&row, 2, 1).unwrap();
        assert_eq!((out.height, out.width), (2, 14));
        for o in 0..14 {
            let x = o as f64 / 2.0;
            let taps: Vec<i64> = (0..7).filter(|&j| ((j as f64) - x).abs() < 3.0).collect();
            let norm: f64 = taps.iter().map(|&j| sinc(j as f64 - x) * sinc((j as f64 - x) / 3.0)).sum();
            let raw = sinc(3.0 - x) * sinc((3.0 - x) / 3.0) * ((3.0 - x).abs() < 3.0) as i32 as f64;
            let want = (raw / norm).clamp(0.0, 1.0);
            assert!((out.get(0, 0, o) - want).abs() < 1e-12, "o={o}: {} vs {want}", out.get(0, 0, o));
        }
        // interior half-integer sample is the plainly normalized kernel value
        let x = 3.5;
        let norm: f64 = (1..=6).map(|j| sinc(j as f64 - x) * sinc((j as f64 - x) / 3.0)).sum();
        assert!((out.get(0, 0, 7) - sinc(0.5) * sinc(0.5 / 3.0) / norm).abs() < 1e-12);
    }

    #[test]
    fn identity_and_errors() {
        let r = Raster::new(1, 4, 4, (0..16).map(|v| v as f64).collect()).unwrap();
        assert_eq!(lanczos_resample(&r, 1, 1).unwrap(), r);
        assert_eq!(lanczos_resample(&r, 3, 3).unwrap(), r);
        assert!(lanczos_resample(&r, 1, 3).is_err());
        assert!(lanczos_resample(&r, 0, 1).is_err());
    }

    #[test]
    fn constant_survives_down_and_up() {
        let r = Raster::new(2, 16, 24, vec![0.37; 2 * 16 * 24]).unwrap();
        let down = lanczos_resample(&r, 1, 4).unwrap();
        assert_eq!((down.height, down.width), (4, 6));
        assert!(down.data.iter().all(|&v| (v - 0.37).abs() < 1e-6));
        let up = lanczos_resample(&down, 4, 1).unwrap();
        assert!(up.data.iter().all(|&v| (v - 0.37).abs() < 1e-6));
    }

    #[test]
    fn output_clamped_to_input_range() {
        let data: Vec<f64> = (0..64).map(|i| if (i / 4) % 2 == 0 { 0.2 } else { 0.8 }).collect();
        let r = Raster::new(1, 8, 8, data).unwrap();
        let up = lanczos_resample(&r, 4, 1).unwrap();
        assert!(up.data.iter().all(|&v| (0.2..=0.8).contains(&v)));
    }
}
