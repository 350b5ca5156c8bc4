use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};
use crate::imagecore::{Image, StructuralMap};

pub const TOY_SIZE: usize = 64;
const SUPERSAMPLE: usize = 4;

#[derive(Clone, Debug)]
enum Outline {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64, angle: f64 },
    Polygon(Vec<(f64, f64)>),
}

impl Outline {
    fn contains(&self, y: f64, x: f64) -> bool {
        match self {
            Outline::Ellipse { cy, cx, ry, rx, angle } => {
                let (s, c) = angle.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                (u / rx).powi(2) + (v / ry).powi(2) <= 1.0
            }
            Outline::Polygon(pts) => {
                let mut inside = false;
                let mut j = pts.len() - 1;
                for i in 0..pts.len() {
                    let (yi, xi) = pts[i];
                    let (yj, xj) = pts[j];
                    if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
                        inside = !inside;
                    }
                    j = i;
                }
                inside
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Shape {
    outline: Outline,
    fill: [f64; 3],
    // direction (unit), period in pixels, alternate color
    stripes: Option<((f64, f64), f64, [f64; 3])>,
}

impl Shape {
    fn color(&self, y: f64, x: f64) -> [f64; 3] {
        match self.stripes {
            Some(((dy, dx), period, alt)) => {
                let t = (y * dy + x * dx) / period;
                if t.rem_euclid(1.0) < 0.5 {
                    self.fill
                } else {
                    alt
                }
            }
            None => self.fill,
        }
    }
}

/// HSV with all components in `[0,1]` to RGB.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn random_shape(rng: &mut ChaCha8Rng, size: f64) -> Shape {
    let cy = rng.random_range(0.2..0.8) * size;
    let cx = rng.random_range(0.2..0.8) * size;
    let r = rng.random_range(0.12..0.3) * size;
    let outline = if rng.random_bool(0.5) {
        Outline::Ellipse { cy, cx, ry: r * rng.random_range(0.5..1.0), rx: r, angle: rng.random_range(0.0..PI) }
    } else {
        let n = rng.random_range(3..=6);
        let start = rng.random_range(0.0..2.0 * PI);
        let pts = (0..n)
            .map(|k| {
                let a = start + 2.0 * PI * k as f64 / n as f64;
                let rr = r * rng.random_range(0.7..1.0);
                (cy + rr * a.sin(), cx + rr * a.cos())
            })
            .collect();
        Outline::Polygon(pts)
    };
    let hue = rng.random_range(0.0..1.0);
    let fill = hsv_to_rgb(hue, rng.random_range(0.5..1.0), rng.random_range(0.5..1.0));
    let stripes = rng.random_bool(0.4).then(|| {
        let a: f64 = rng.random_range(0.0..PI);
        let alt = hsv_to_rgb(hue, rng.random_range(0.2..0.6), rng.random_range(0.2..0.5));
        ((a.sin(), a.cos()), rng.random_range(4.0..10.0), alt)
    });
    Shape { outline, fill, stripes }
}

/// One toy scene: a flat background with 1 to 4 anti-aliased shapes and the
/// exact boundary map of the painted label image.
pub fn toy_sample(seed: u64, index: u64) -> (Image, StructuralMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    let n = TOY_SIZE;
    let size = n as f64;
    let background = hsv_to_rgb(rng.random_range(0.0..1.0), rng.random_range(0.0..0.5), rng.random_range(0.15..0.9));
    let count = rng.random_range(1..=4);
    let shapes: Vec<Shape> = (0..count).map(|_| random_shape(&mut rng, size)).collect();
    let top = |y: f64, x: f64| shapes.iter().rposition(|s| s.outline.contains(y, x));

    let mut data = vec![0f32; 3 * n * n];
    let ss = SUPERSAMPLE as f64;
    for py in 0..n {
        for px in 0..n {
            let mut acc = [0f64; 3];
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let y = py as f64 + (sy as f64 + 0.5) / ss;
                    let x = px as f64 + (sx as f64 + 0.5) / ss;
                    let c = top(y, x).map_or(background, |i| shapes[i].color(y, x));
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
            }
            for k in 0..3 {
                data[(k * n + py) * n + px] = (acc[k] / (ss * ss)).clamp(0.0, 1.0) as f32;
            }
        }
    }
    let image = Image::new(n, n, data).expect("toy image");

    let labels: Vec<Option<usize>> =
        (0..n * n).map(|i| top((i / n) as f64 + 0.5, (i % n) as f64 + 0.5)).collect();
    let mut map = StructuralMap::zeros(n, n);
    for y in 0..n {
        for x in 0..n {
            let l = labels[y * n + x];
            let right = x + 1 < n && labels[y * n + x + 1] != l;
            let down = y + 1 < n && labels[(y + 1) * n + x] != l;
            if right || down {
                map.set(y, x, true);
            }
        }
    }
    (image, map)
}

/// Writes `img_{i:05}.png` and `map_{i:05}.png` for `i < n`.
pub fn gen_dataset(out_dir: &Path, n: usize, seed: u64) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| CodecError::io(out_dir, e))?;
    let mut written = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (img, map) = toy_sample(seed, i as u64);
        let ip = out_dir.join(format!("img_{i:05}.png"));
        let mp = out_dir.join(format!("map_{i:05}.png"));
        img.save(&ip)?;
        map.save(&mp)?;
        written.push(ip);
        written.push(mp);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(1.0 / 3.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(0.5, 0.0, 0.4), [0.4, 0.4, 0.4]);
    }

    #[test]
    fn samples_are_deterministic_and_distinct() {
        let (a, ma) = toy_sample(7, 3);
        let (b, mb) = toy_sample(7, 3);
        assert_eq!(a, b);
        assert_eq!(ma, mb);
        assert_ne!(toy_sample(7, 4).0, a);
        assert_ne!(toy_sample(8, 3).0, a);
        assert!(ma.count_ones() > 0);
    }

    #[test]
    fn polygon_and_ellipse_membership() {
        let sq = Outline::Polygon(vec![(0.0, 0.0), (0.0, 2.0), (2.0, 2.0), (2.0, 0.0)]);
        assert!(sq.contains(1.0, 1.0));
        assert!(!sq.contains(3.0, 1.0));
        let e = Outline::Ellipse { cy: 0.0, cx: 0.0, ry: 1.0, rx: 2.0, angle: 0.0 };
        assert!(e.contains(0.0, 1.9));
        assert!(!e.contains(1.1, 0.0));
    }

    #[test]
    fn dataset_files_are_reproducible() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = gen_dataset(d1.path(), 3, 7).unwrap();
        let f2 = gen_dataset(d2.path(), 3, 7).unwrap();
        assert_eq!(f1.len(), 6);
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        let img = Image::load(&f1[0]).unwrap();
        assert_eq!((img.height(), img.width()), (64, 64));
    }
}
