//! Raster types, PNG I/O, edge extraction and resampling.
//!
//! Images are stored planar (`[channel][row][col]`) so they convert to
//! `NCHW` tensors without reshuffling.

mod edges;
mod resample;

use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{CodecError, Result};

pub use edges::{extract_edges, EdgeParams};
pub use resample::{lanczos_kernel, lanczos_resample};

/// RGB image with components in `[0,1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    /// Builds an image from planar RGB data. Dimensions must be even and at
    /// least 8; components must lie in `[0,1]`.
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height < 8 || width < 8 || height % 2 != 0 || width % 2 != 0 {
            return Err(CodecError::Argument(format!(
                "image dimensions {height}x{width} must be even and at least 8"
            )));
        }
        if data.len() != 3 * height * width {
            return Err(CodecError::Argument(format!(
                "expected {} components for {height}x{width} RGB, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CodecError::Argument(format!("component {v} outside [0,1]")));
        }
        Ok(Image { height, width, data })
    }

    /// Uniform-color image.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let n = height * width;
        let data = rgb.iter().flat_map(|&c| std::iter::repeat_n(c, n)).collect();
        Self::new(height, width, data)
    }

    /// Like [`Image::new`] but clamps components into `[0,1]` first.
    pub fn from_clamped(height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Planar RGB components.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn mean_rgb(&self) -> [f64; 3] {
        let n = (self.height * self.width) as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = self.channel(c).iter().map(|&v| v as f64).sum::<f64>() / n;
        }
        out
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            channels: 3,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_err(path, e))?;
        let rgb = match img {
            DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageRgb8(_)
            | DynamicImage::ImageRgba8(_) => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                planar_from_interleaved(h as usize, w as usize, rgb.as_raw(), |v| v as f32 / 255.0)
            }
            DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
            | DynamicImage::ImageRgb16(_)
            | DynamicImage::ImageRgba16(_) => {
                let rgb = img.to_rgb16();
                let (w, h) = rgb.dimensions();
                planar_from_interleaved(h as usize, w as usize, rgb.as_raw(), |v| v as f32 / 65535.0)
            }
            other => {
                return Err(CodecError::Format(format!(
                    "{}: unsupported pixel format {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (h, w, data) = rgb;
        Self::new(h, w, data)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let n = self.height * self.width;
        let mut buf = Vec::with_capacity(3 * n);
        for i in 0..n {
            for c in 0..3 {
                buf.push((self.data[c * n + i] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        RgbImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer sized to image")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|e| image_err(path, e))
    }
}

fn planar_from_interleaved<P: Copy>(
    h: usize,
    w: usize,
    raw: &[P],
    f: impl Fn(P) -> f32,
) -> (usize, usize, Vec<f32>) {
    let n = h * w;
    let mut data = vec![0.0; 3 * n];
    for i in 0..n {
        for c in 0..3 {
            data[c * n + i] = f(raw[3 * i + c]);
        }
    }
    (h, w, data)
}

fn image_err(path: &Path, e: image::ImageError) -> CodecError {
    match e {
        image::ImageError::IoError(io) => CodecError::io(path, io),
        other => CodecError::Format(format!("{}: {other}", path.display())),
    }
}

/// Single-channel binary edge mask, 1 = edge.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StructuralMap {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl StructuralMap {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CodecError::Argument("structural map must be non-empty".into()));
        }
        if data.len() != height * width {
            return Err(CodecError::Argument(format!(
                "expected {} entries for {height}x{width} map, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|&v| v > 1) {
            return Err(CodecError::Argument("structural map entries must be 0 or 1".into()));
        }
        Ok(StructuralMap { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        StructuralMap { height, width, data: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    pub fn to_raster(&self) -> Raster {
        Raster {
            channels: 1,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| v as f64).collect(),
        }
    }

    /// Reads a grayscale or RGB PNG; pixels at or above mid-gray are edges.
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&v| (v >= 128) as u8).collect();
        Self::new(h as usize, w as usize, data)
    }

    pub fn to_gray8(&self) -> GrayImage {
        let buf = self.data.iter().map(|&v| v * 255).collect();
        GrayImage::from_raw(self.width as u32, self.height as u32, buf).expect("buffer sized to map")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_gray8().save(path).map_err(|e| image_err(path, e))
    }

    /// Fraction of positions where two equally sized maps agree.
    pub fn agreement(&self, other: &StructuralMap) -> f64 {
        assert_eq!((self.height, self.width), (other.height, other.width));
        let same = self.data.iter().zip(&other.data).filter(|(a, b)| a == b).count();
        same as f64 / self.data.len() as f64
    }
}

/// Planar real-valued raster used for resampling and thresholding.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(CodecError::Argument(format!(
                "raster {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(Raster { channels, height, width, data })
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Entry is 1 iff the value is at least `threshold`. Multi-channel rasters
/// use their first channel.
pub fn binarize(data: &Raster, threshold: f64) -> StructuralMap {
    StructuralMap {
        height: data.height,
        width: data.width,
        data: data.plane(0).iter().map(|&v| (v >= threshold) as u8).collect(),
    }
}

/// Ceiling reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Peak signal-to-noise ratio for unit-range images, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    if (a.height, a.width) != (b.height, b.width) {
        return Err(CodecError::Argument(format!(
            "psnr: {}x{} vs {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    let mse = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((-10.0 * mse.log10()).min(PSNR_CAP_DB))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_examples() {
        let zeros = Image::filled(8, 8, [0.0; 3]).unwrap();
        let ones = Image::filled(8, 8, [1.0; 3]).unwrap();
        let half = Image::filled(8, 8, [0.5; 3]).unwrap();
        assert_eq!(psnr(&zeros, &ones).unwrap(), 0.0);
        assert_eq!(psnr(&ones, &ones).unwrap(), 99.0);
        assert!((psnr(&zeros, &half).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
        assert!(psnr(&zeros, &Image::filled(8, 10, [0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn png_normalization() {
        let dir = tempfile::tempdir().unwrap();
        for (v, want) in [(255u8, 1.0f32), (0, 0.0), (128, 128.0 / 255.0)] {
            let p = dir.path().join(format!("{v}.png"));
            RgbImage::from_pixel(8, 8, image::Rgb([v, v, v])).save(&p).unwrap();
            let img = Image::load(&p).unwrap();
            assert_eq!((img.height(), img.width()), (8, 8));
            assert!(img.data().iter().all(|&x| x == want));
        }
        assert!((128.0f32 / 255.0 - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn png_roundtrip_is_exact_for_8bit() {
        let dir = tempfile::tempdir().unwrap();
        let data: Vec<f32> = (0..3 * 64).map(|i| (i % 256) as f32 / 255.0).collect();
        let img = Image::new(8, 8, data).unwrap();
        let p = dir.path().join("x.png");
        img.save(&p).unwrap();
        assert_eq!(Image::load(&p).unwrap(), img);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = Image::load(Path::new("/nonexistent/none.png")).unwrap_err();
        assert!(matches!(err, CodecError::Io { .. }), "{err}");
    }

    #[test]
    fn rejects_bad_dimensions_and_range() {
        assert!(Image::new(7, 8, vec![0.0; 168]).is_err());
        assert!(Image::new(6, 8, vec![0.0; 144]).is_err());
        assert!(Image::new(8, 8, vec![1.5; 192]).is_err());
        assert!(StructuralMap::new(2, 2, vec![0, 1, 2, 0]).is_err());
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let r = Raster::new(1, 2, 2, vec![0.6; 4]).unwrap();
        assert!(binarize(&r, 0.5).data().iter().all(|&v| v == 1));
        let r = Raster::new(1, 2, 2, vec![0.5 - 1e-9; 4]).unwrap();
        assert!(binarize(&r, 0.5).data().iter().all(|&v| v == 0));
        let r = Raster::new(1, 1, 4, vec![0.1, 0.5, 0.49, 0.9]).unwrap();
        assert_eq!(binarize(&r, 0.5).data(), &[0, 1, 0, 1]);
    }

    #[test]
    fn map_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = StructuralMap::new(3, 4, vec![0, 1, 1, 0, 0, 0, 1, 0, 1, 1, 1, 1]).unwrap();
        let p = dir.path().join("m.png");
        m.save(&p).unwrap();
        assert_eq!(StructuralMap::load(&p).unwrap(), m);
    }
}
