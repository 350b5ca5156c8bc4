use ccodec_nn::layers::lrelu_gain;
use ccodec_nn::{Conv2d, Graph, Linear, ParamStore, Tensor, Var, LRELU_SLOPE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};
use crate::imagecore::Image;

pub const LOGVAR_LIMIT: f64 = 20.0;

/// Diagonal Gaussian posterior over the texture latent.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorGaussian {
    pub mu: Vec<f32>,
    pub logvar: Vec<f32>,
}

/// `mu + exp(logvar / 2) * noise`.
pub fn sample_latent(post: &PosteriorGaussian, noise: &[f32]) -> Result<Vec<f32>> {
    if noise.len() != post.mu.len() {
        return Err(CodecError::Argument(format!(
            "noise length {} vs latent dimension {}",
            noise.len(),
            post.mu.len()
        )));
    }
    Ok(post
        .mu
        .iter()
        .zip(&post.logvar)
        .zip(noise)
        .map(|((&m, &lv), &n)| (m as f64 + (lv as f64 / 2.0).exp() * n as f64) as f32)
        .collect())
}

#[derive(Clone, Debug)]
struct ResDown {
    conv1: Conv2d,
    conv2: Conv2d,
    skip: Conv2d,
}

/// Stem conv, four stride-2 residual blocks, global average pooling and two
/// linear heads for `mu` and `logvar`.
#[derive(Clone, Debug)]
pub struct TextureEncoder {
    pub params: ParamStore<f32>,
    stem: Conv2d,
    blocks: Vec<ResDown>,
    mu_head: Linear,
    logvar_head: Linear,
    latent_dim: usize,
    image_size: usize,
}

pub const ENCODER_CHANNELS: [usize; 5] = [16, 32, 64, 64, 64];

impl TextureEncoder {
    pub fn new(latent_dim: usize, image_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let gain = lrelu_gain(LRELU_SLOPE);
        let stem = Conv2d::same3(&mut ps, "stem", 3, ENCODER_CHANNELS[0], gain, &mut rng);
        let blocks = ENCODER_CHANNELS
            .windows(2)
            .enumerate()
            .map(|(i, c)| ResDown {
                conv1: Conv2d::new(&mut ps, &format!("res{i}.conv1"), c[0], c[1], 3, 2, 1, gain, &mut rng),
                conv2: Conv2d::same3(&mut ps, &format!("res{i}.conv2"), c[1], c[1], gain * 0.5, &mut rng),
                skip: Conv2d::new(&mut ps, &format!("res{i}.skip"), c[0], c[1], 1, 2, 0, 1.0, &mut rng),
            })
            .collect();
        let last = *ENCODER_CHANNELS.last().unwrap();
        let mu_head = Linear::new(&mut ps, "mu", last, latent_dim, 1.0, &mut rng);
        let logvar_head = Linear::new(&mut ps, "logvar", last, latent_dim, 0.1, &mut rng);
        TextureEncoder { params: ps, stem, blocks, mu_head, logvar_head, latent_dim, image_size }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// `N×3×H×W` images to `(mu, logvar)`, each `N×d`; logvar clamped to ±20.
    pub fn forward<'g>(&self, g: &'g Graph<f32>, x: Var<'g, f32>) -> (Var<'g, f32>, Var<'g, f32>) {
        let ps = &self.params;
        let mut h = self.stem.forward(g, ps, x).leaky_relu(LRELU_SLOPE);
        for b in &self.blocks {
            let r = b.conv1.forward(g, ps, h).leaky_relu(LRELU_SLOPE);
            let r = b.conv2.forward(g, ps, r);
            h = r.add(b.skip.forward(g, ps, h)).leaky_relu(LRELU_SLOPE);
        }
        let n = h.shape()[0];
        let c = h.shape()[1];
        let pooled = h.mean_axes(&[2, 3]).reshape(vec![n, c]);
        let mu = self.mu_head.forward(g, ps, pooled);
        let logvar = self.logvar_head.forward(g, ps, pooled).clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT);
        (mu, logvar)
    }

    /// Posterior for one image of the configured size.
    pub fn encode(&self, img: &Image) -> Result<PosteriorGaussian> {
        if img.height() != self.image_size || img.width() != self.image_size {
            return Err(CodecError::Argument(format!(
                "texture encoder expects {0}x{0} images, got {1}x{2}",
                self.image_size,
                img.height(),
                img.width()
            )));
        }
        let g = Graph::new();
        let x = g.constant(image_tensor(img));
        let (mu, logvar) = self.forward(&g, x);
        Ok(PosteriorGaussian { mu: mu.value().data().to_vec(), logvar: logvar.value().data().to_vec() })
    }
}

/// `1×3×H×W` tensor of an image.
pub fn image_tensor(img: &Image) -> Tensor<f32> {
    Tensor::new(vec![1, 3, img.height(), img.width()], img.data().to_vec()).expect("image shape")
}

/// Alias kept close to the domain vocabulary.
pub fn encode_texture(enc: &TextureEncoder, img: &Image) -> Result<PosteriorGaussian> {
    enc.encode(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn posterior_shapes_and_determinism() {
        let enc = TextureEncoder::new(64, 64, 1);
        let img = Image::filled(64, 64, [0.2, 0.5, 0.9]).unwrap();
        let a = enc.encode(&img).unwrap();
        assert_eq!(a.mu.len(), 64);
        assert_eq!(a.logvar.len(), 64);
        assert_eq!(a, enc.encode(&img).unwrap());
        assert!(a.logvar.iter().all(|v| v.abs() <= 20.0));
        assert!(enc.encode(&Image::filled(32, 32, [0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn reparameterization_examples() {
        let post = PosteriorGaussian { mu: vec![0.5, -1.0], logvar: vec![0.0, 0.0] };
        assert_eq!(sample_latent(&post, &[0.0, 0.0]).unwrap(), post.mu);
        assert_eq!(sample_latent(&post, &[1.0, 2.0]).unwrap(), vec![1.5, 1.0]);
        let post = PosteriorGaussian { mu: vec![0.0; 4], logvar: vec![2.0f32 * 2f32.ln(); 4] };
        let z = sample_latent(&post, &[1.0, -1.0, 1.0, -1.0]).unwrap();
        for (v, want) in z.iter().zip([2.0, -2.0, 2.0, -2.0]) {
            assert!((v - want).abs() < 1e-6);
        }
        assert!(sample_latent(&post, &[1.0]).is_err());
    }
}
