use super::{Image, StructuralMap};
use crate::error::{CodecError, Result};

/// Canny settings. Thresholds apply to Sobel magnitudes normalized so a unit
/// step has magnitude 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeParams {
    pub blur_sigma: f64,
    pub low: f64,
    pub high: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        EdgeParams { blur_sigma: 1.4, low: 0.1, high: 0.2 }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

// Separable blur with edge replication.
fn blur(plane: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * plane[y * w + clampi(x as isize + k as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, &kv)| kv * tmp[clampi(y as isize + k as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Canny edge detection on an RGB image.
///
/// Each channel is Gaussian-blurred (`blur_sigma = 0` disables it) and Sobel
/// filtered; per pixel the channel with the largest gradient wins. Thin
/// edges come from non-maximum suppression along the quantized gradient
/// direction, ties resolved toward the lower/left pixel so a step edge
/// yields one column. Hysteresis keeps weak pixels 8-connected to strong
/// ones.
pub fn extract_edges(img: &Image, p: &EdgeParams) -> Result<StructuralMap> {
    if !(p.blur_sigma >= 0.0 && p.low >= 0.0 && p.low < p.high) {
        return Err(CodecError::Argument(format!(
            "edge parameters need sigma >= 0 and 0 <= low < high, got {p:?}"
        )));
    }
    let (h, w) = (img.height(), img.width());
    let n = h * w;
    let kernel = (p.blur_sigma > 0.0).then(|| gaussian_kernel(p.blur_sigma));
    let mut mag = vec![0.0f64; n];
    let mut gxs = vec![0.0f64; n];
    let mut gys = vec![0.0f64; n];
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for c in 0..3 {
        let raw: Vec<f64> = img.channel(c).iter().map(|&v| v as f64).collect();
        let plane = match &kernel {
            Some(k) => blur(&raw, h, w, k),
            None => raw,
        };
        let at = |y: isize, x: isize| plane[clampi(y, h) * w + clampi(x, w)];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let gx = (at(y - 1, x + 1) + 2.0 * at(y, x + 1) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y, x - 1)
                    - at(y + 1, x - 1))
                    / 4.0;
                let gy = (at(y + 1, x - 1) + 2.0 * at(y + 1, x) + at(y + 1, x + 1)
                    - at(y - 1, x - 1)
                    - 2.0 * at(y - 1, x)
                    - at(y - 1, x + 1))
                    / 4.0;
                let m = (gx * gx + gy * gy).sqrt();
                let i = y as usize * w + x as usize;
                if m > mag[i] {
                    mag[i] = m;
                    gxs[i] = gx;
                    gys[i] = gy;
                }
            }
        }
    }

    // Non-maximum suppression; neighbours outside the image count as zero.
    let get = |y: isize, x: isize| {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            mag[y as usize * w + x as usize]
        }
    };
    let mut thin = vec![0.0f64; n];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let m = mag[i];
            if m <= 0.0 {
                continue;
            }
            let angle = gys[i].atan2(gxs[i]).to_degrees().rem_euclid(180.0);
            let (dy, dx) = if !(22.5..157.5).contains(&angle) {
                (0, 1)
            } else if angle < 67.5 {
                (1, 1)
            } else if angle < 112.5 {
                (1, 0)
            } else {
                (1, -1)
            };
            let (yi, xi) = (y as isize, x as isize);
            let before = get(yi - dy, xi - dx);
            let after = get(yi + dy, xi + dx);
            if m > before && m >= after {
                thin[i] = m;
            }
        }
    }

    let mut out = vec![0u8; n];
    let mut stack: Vec<usize> = (0..n).filter(|&i| thin[i] >= p.high).collect();
    for &i in &stack {
        out[i] = 1;
    }
    while let Some(i) = stack.pop() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (ny, nx) = (y + dy, x + dx);
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if out[j] == 0 && thin[j] >= p.low {
                    out[j] = 1;
                    stack.push(j);
                }
            }
        }
    }
    StructuralMap::new(h, w, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::binarize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn step_image(h: usize, w: usize) -> Image {
        let plane: Vec<f32> = (0..h * w).map(|i| if i % w >= w / 2 { 1.0 } else { 0.0 }).collect();
        Image::new(h, w, plane.repeat(3)).unwrap()
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Image::filled(16, 16, [0.4, 0.4, 0.4]).unwrap();
        assert_eq!(extract_edges(&img, &EdgeParams::default()).unwrap().count_ones(), 0);
    }

    #[test]
    fn step_image_gives_single_column() {
        for sigma in [0.0, 1.0, 1.4, 2.0] {
            let p = EdgeParams { blur_sigma: sigma, ..Default::default() };
            let m = extract_edges(&step_image(16, 16), &p).unwrap();
            let cols: Vec<usize> = (0..16).filter(|&x| (0..16).any(|y| m.get(y, x) == 1)).collect();
            assert_eq!(cols.len(), 1, "sigma {sigma}: columns {cols:?}");
            assert!(cols[0] == 7 || cols[0] == 8);
            assert!((0..16).all(|y| m.get(y, cols[0]) == 1), "sigma {sigma}: column incomplete");
        }
    }

    #[test]
    fn blur_reduces_noise_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f32> = (0..3 * 32 * 32).map(|_| rng.random::<f32>()).collect();
        let img = Image::new(32, 32, data).unwrap();
        let sharp = extract_edges(&img, &EdgeParams { blur_sigma: 0.0, ..Default::default() }).unwrap();
        let blurred = extract_edges(&img, &EdgeParams { blur_sigma: 2.0, ..Default::default() }).unwrap();
        assert!(blurred.count_ones() <= sharp.count_ones());
    }

    #[test]
    fn output_is_idempotently_binary_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data: Vec<f32> = (0..3 * 16 * 16).map(|_| rng.random::<f32>()).collect();
        let img = Image::new(16, 16, data).unwrap();
        let a = extract_edges(&img, &EdgeParams::default()).unwrap();
        let b = extract_edges(&img, &EdgeParams::default()).unwrap();
        assert_eq!(a, b);
        for t in [0.01, 0.5, 0.99] {
            assert_eq!(binarize(&a.to_raster(), t), a);
        }
    }

    #[test]
    fn rejects_bad_thresholds() {
        let img = Image::filled(8, 8, [0.0; 3]).unwrap();
        assert!(extract_edges(&img, &EdgeParams { low: 0.3, high: 0.2, blur_sigma: 1.0 }).is_err());
        assert!(extract_edges(&img, &EdgeParams { low: 0.1, high: 0.2, blur_sigma: -1.0 }).is_err());
    }
}
