use ccodec_nn::layers::lrelu_gain;
use ccodec_nn::{Conv2d, Graph, Linear, ParamStore, Tensor, Var, LRELU_SLOPE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};
use crate::imagecore::{Image, StructuralMap};

pub const ADAIN_EPS: f64 = 1e-8;
// Affine heads start near the identity modulation.
const AFFINE_GAIN: f64 = 0.25;

/// Block count, per-block channel counts `c_0..c_k` and latent dimension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub k: usize,
    pub channels: Vec<usize>,
    pub latent_dim: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig { k: 5, channels: vec![256, 256, 128, 128, 64, 64], latent_dim: 64 }
    }
}

impl GeneratorConfig {
    /// Evenly halving schedule from `base` down to a floor of 16.
    pub fn with_width(k: usize, base: usize, latent_dim: usize) -> Self {
        let channels = (0..=k).map(|i| (base >> (i / 2)).max(16)).collect();
        GeneratorConfig { k, channels, latent_dim }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k > 12 {
            return Err(CodecError::Config(format!("generator block count {} outside 1..=12", self.k)));
        }
        if self.channels.len() != self.k + 1 || self.channels.contains(&0) {
            return Err(CodecError::Config(format!(
                "generator needs {} positive channel counts, got {:?}",
                self.k + 1,
                self.channels
            )));
        }
        if self.latent_dim == 0 {
            return Err(CodecError::Config("latent dimension must be positive".into()));
        }
        Ok(())
    }

    /// Side length of the generated image, `2^(k+1)`.
    pub fn output_size(&self) -> usize {
        1 << (self.k + 1)
    }
}

#[derive(Clone, Debug)]
struct FuseBlock {
    convs: [Conv2d; 3],
    alpha: [Linear; 3],
    beta: [Linear; 3],
    skip: Option<Conv2d>,
}

/// Hierarchical fusion generator.
///
/// `G_0` average-pools the structural map to 2x2 and applies a 3x3 conv.
/// Block `i` upsamples `A_{i-1}` (nearest), then runs three stages of
/// `AdaIN([h; s_i]) -> lrelu -> conv3x3`, where `s_i` is the map pooled to the
/// block resolution and the AdaIN parameters for all `n+1` channels come from
/// linear maps of `z`. A 1x1 projection (identity when widths match) of the
/// upsampled input is added. Each `A_i` emits `B_i` through a 3x3 conv and
/// `x_i = B_i + up_bilinear(x_{i-1})`; the image is `(tanh(x_k) + 1) / 2`.
#[derive(Clone, Debug)]
pub struct Generator {
    pub cfg: GeneratorConfig,
    pub params: ParamStore<f32>,
    g0: Conv2d,
    blocks: Vec<FuseBlock>,
    to_rgb: Vec<Conv2d>,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let gain = lrelu_gain(LRELU_SLOPE);
        let c = &cfg.channels;
        let d = cfg.latent_dim;
        let g0 = Conv2d::same3(&mut ps, "g0", 1, c[0], gain, &mut rng);
        let mut blocks = Vec::with_capacity(cfg.k);
        for i in 1..=cfg.k {
            let p = format!("block{i}");
            let ins = [c[i - 1] + 1, c[i] + 1, c[i] + 1];
            let convs = [0, 1, 2].map(|j| Conv2d::same3(&mut ps, &format!("{p}.conv{j}"), ins[j], c[i], gain, &mut rng));
            let alpha = [0, 1, 2]
                .map(|j| Linear::with_bias(&mut ps, &format!("{p}.alpha{j}"), d, ins[j], AFFINE_GAIN, 1.0, &mut rng));
            let beta = [0, 1, 2]
                .map(|j| Linear::with_bias(&mut ps, &format!("{p}.beta{j}"), d, ins[j], AFFINE_GAIN, 0.0, &mut rng));
            let skip = (c[i - 1] != c[i])
                .then(|| Conv2d::new(&mut ps, &format!("{p}.skip"), c[i - 1], c[i], 1, 1, 0, 1.0, &mut rng));
            blocks.push(FuseBlock { convs, alpha, beta, skip });
        }
        let to_rgb = (0..=cfg.k)
            .map(|i| Conv2d::same3(&mut ps, &format!("rgb{i}"), c[i], 3, 0.5, &mut rng))
            .collect();
        Ok(Generator { cfg, params: ps, g0, blocks, to_rgb })
    }

    /// Parameter ids of every affine head, `(block, stage, alpha, beta)`.
    pub fn affine_heads(&self) -> Vec<(usize, usize, ccodec_nn::ParamId, ccodec_nn::ParamId)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            for j in 0..3 {
                out.push((i + 1, j, b.alpha[j].w, b.beta[j].w));
            }
        }
        out
    }

    /// `A_0` from the full-resolution map (`N×1×S×S`).
    pub fn initial<'g>(&self, g: &'g Graph<f32>, s: Var<'g, f32>) -> Var<'g, f32> {
        let size = s.shape()[2];
        let pooled = s.avg_pool(size / 2);
        self.g0.forward(g, &self.params, pooled).leaky_relu(LRELU_SLOPE)
    }

    /// Block `i >= 1`: `A_{i-1}` and the map at `A_i`'s resolution to `A_i`.
    pub fn fuse_block<'g>(
        &self,
        g: &'g Graph<f32>,
        i: usize,
        prev: Var<'g, f32>,
        s_i: Var<'g, f32>,
        z: Var<'g, f32>,
    ) -> Result<Var<'g, f32>> {
        let b = self
            .blocks
            .get(i.wrapping_sub(1))
            .ok_or_else(|| CodecError::Argument(format!("block index {i} outside 1..={}", self.cfg.k)))?;
        let ps = &self.params;
        let (ps_shape, s_shape) = (prev.shape(), s_i.shape());
        if ps_shape.len() != 4 || ps_shape[1] != self.cfg.channels[i - 1] {
            return Err(CodecError::Argument(format!("block {i} input shape {ps_shape:?}")));
        }
        if s_shape != [ps_shape[0], 1, 2 * ps_shape[2], 2 * ps_shape[3]] {
            return Err(CodecError::Argument(format!(
                "block {i}: structural map {s_shape:?} does not match upsampled input {ps_shape:?}"
            )));
        }
        if z.shape() != [ps_shape[0], self.cfg.latent_dim] {
            return Err(CodecError::Argument(format!("block {i}: latent shape {:?}", z.shape())));
        }
        let up = prev.upsample_nearest(2);
        let mut h = up;
        for j in 0..3 {
            let cat = g.concat(&[h, s_i]);
            let alpha = b.alpha[j].forward(g, ps, z);
            let beta = b.beta[j].forward(g, ps, z);
            let m = cat.adain(alpha, beta, ADAIN_EPS).leaky_relu(LRELU_SLOPE);
            h = b.convs[j].forward(g, ps, m);
        }
        let skip = match &b.skip {
            Some(conv) => conv.forward(g, ps, up),
            None => up,
        };
        Ok(h.add(skip))
    }

    /// Runs the full pyramid. With `rgb_base_only`, every `B_i` for `i > 0` is
    /// dropped so the result is the upsampled `x_0`.
    pub fn forward_with<'g>(
        &self,
        g: &'g Graph<f32>,
        z: Var<'g, f32>,
        s: Var<'g, f32>,
        rgb_base_only: bool,
    ) -> Result<Var<'g, f32>> {
        let size = self.cfg.output_size();
        let shape = s.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != size || shape[3] != size {
            return Err(CodecError::Argument(format!(
                "generator expects N×1×{size}×{size} structural maps, got {shape:?}"
            )));
        }
        let mut a = self.initial(g, s);
        let mut x = self.to_rgb[0].forward(g, &self.params, a);
        for i in 1..=self.cfg.k {
            let res = 2 << i;
            let s_i = if res == size { s } else { s.avg_pool(size / res) };
            a = self.fuse_block(g, i, a, s_i, z)?;
            let up = x.upsample_bilinear2x();
            x = if rgb_base_only { up } else { self.to_rgb[i].forward(g, &self.params, a).add(up) };
        }
        Ok(x.tanh().add_scalar(1.0).mul_scalar(0.5))
    }

    pub fn forward<'g>(&self, g: &'g Graph<f32>, z: Var<'g, f32>, s: Var<'g, f32>) -> Result<Var<'g, f32>> {
        self.forward_with(g, z, s, false)
    }

    /// Renders one image from a latent and a full-resolution map.
    pub fn generate(&self, z: &[f32], s: &StructuralMap) -> Result<Image> {
        if z.len() != self.cfg.latent_dim {
            return Err(CodecError::Argument(format!(
                "latent length {} vs generator dimension {}",
                z.len(),
                self.cfg.latent_dim
            )));
        }
        let g = Graph::new();
        let zv = g.constant(Tensor::new(vec![1, z.len()], z.to_vec())?);
        let sv = g.constant(map_tensor(s));
        let y = self.forward(&g, zv, sv)?;
        let size = self.cfg.output_size();
        Image::from_clamped(size, size, y.value().data().to_vec())
    }
}

/// `1×1×H×W` tensor of a structural map.
pub fn map_tensor(s: &StructuralMap) -> Tensor<f32> {
    let data = s.data().iter().map(|&v| v as f32).collect();
    Tensor::new(vec![1, 1, s.height(), s.width()], data).expect("map shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccodec_nn::kernels;

    fn small(k: usize) -> Generator {
        Generator::new(GeneratorConfig::with_width(k, 8, 4), 1).unwrap()
    }

    #[test]
    fn output_size_follows_block_count() {
        for k in [1, 2, 3] {
            let gen = small(k);
            let n = gen.cfg.output_size();
            let img = gen.generate(&[0.1, -0.2, 0.3, 0.0], &StructuralMap::zeros(n, n));
            if n >= 8 {
                let img = img.unwrap();
                assert_eq!((img.height(), img.width()), (n, n));
            }
        }
        assert_eq!(GeneratorConfig::default().output_size(), 64);
        assert_eq!(GeneratorConfig { k: 7, channels: vec![8; 8], latent_dim: 64 }.output_size(), 256);
    }

    #[test]
    fn generate_is_deterministic_and_checks_shapes() {
        let gen = small(3);
        let mut s = StructuralMap::zeros(16, 16);
        s.set(3, 4, true);
        let a = gen.generate(&[0.5, 0.1, -1.0, 2.0], &s).unwrap();
        assert_eq!(a, gen.generate(&[0.5, 0.1, -1.0, 2.0], &s).unwrap());
        assert!(gen.generate(&[0.5], &s).is_err());
        assert!(gen.generate(&[0.0; 4], &StructuralMap::zeros(8, 8)).is_err());
    }

    #[test]
    fn first_conv_sees_edge_channel() {
        let gen = small(3);
        for (i, b) in gen.blocks.iter().enumerate() {
            assert_eq!(b.convs[0].in_channels, gen.cfg.channels[i] + 1);
            assert_eq!(b.alpha[0].out_features, gen.cfg.channels[i] + 1);
        }
    }

    #[test]
    fn block_output_doubles_resolution() {
        let gen = small(3);
        let g = Graph::new();
        let prev = g.constant(Tensor::full(vec![1, gen.cfg.channels[1], 4, 4], 0.3));
        let s = g.constant(Tensor::zeros(vec![1, 1, 8, 8]));
        let z = g.constant(Tensor::zeros(vec![1, 4]));
        let a = gen.fuse_block(&g, 2, prev, s, z).unwrap();
        assert_eq!(a.shape(), vec![1, gen.cfg.channels[2], 8, 8]);
        let bad = g.constant(Tensor::zeros(vec![1, 1, 4, 4]));
        assert!(gen.fuse_block(&g, 2, prev, bad, z).is_err());
    }

    // Hand-evaluated single block on a 2x2 input with z = 0, so every
    // modulation is alpha = 1 (bias), beta = 0.
    #[test]
    fn fuse_block_matches_stepwise_oracle() {
        let cfg = GeneratorConfig { k: 1, channels: vec![2, 3], latent_dim: 4 };
        let gen = Generator::new(cfg, 9).unwrap();
        let prev: Vec<f32> = vec![0.1, -0.4, 0.7, 0.2, 1.0, 0.0, -0.3, 0.5];
        let s: Vec<f32> = vec![0., 1., 0., 0., 1., 1., 0., 0., 0., 0., 1., 0., 0., 0., 0., 1.];

        let g = Graph::new();
        let out = gen
            .fuse_block(
                &g,
                1,
                g.constant(Tensor::new(vec![1, 2, 2, 2], prev.clone()).unwrap()),
                g.constant(Tensor::new(vec![1, 1, 4, 4], s.clone()).unwrap()),
                g.constant(Tensor::zeros(vec![1, 4])),
            )
            .unwrap();

        // oracle in f64 with explicit loops
        let up: Vec<f64> = (0..2)
            .flat_map(|c| (0..16).map(move |i| (c, i)))
            .map(|(c, i)| prev[c * 4 + (i / 4 / 2) * 2 + (i % 4) / 2] as f64)
            .collect();
        let normalize = |x: &[f64]| -> Vec<f64> {
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            let sd = (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt();
            x.iter().map(|v| (v - m) / (sd + ADAIN_EPS)).collect()
        };
        let conv = |x: &[f64], cin: usize, layer: &Conv2d| -> Vec<f64> {
            let w = gen.params.get(layer.w).data();
            let b = gen.params.get(layer.b.unwrap()).data();
            let mut y = vec![0.0; layer.out_channels * 16];
            for o in 0..layer.out_channels {
                for py in 0..4i32 {
                    for px in 0..4i32 {
                        let mut acc = b[o] as f64;
                        for ci in 0..cin {
                            for ky in 0..3i32 {
                                for kx in 0..3i32 {
                                    let (yy, xx) = (py + ky - 1, px + kx - 1);
                                    if (0..4).contains(&yy) && (0..4).contains(&xx) {
                                        acc += w[((o * cin + ci) * 3 + ky as usize) * 3 + kx as usize] as f64
                                            * x[ci * 16 + (yy * 4 + xx) as usize];
                                    }
                                }
                            }
                        }
                        y[o * 16 + (py * 4 + px) as usize] = acc;
                    }
                }
            }
            y
        };
        let block = &gen.blocks[0];
        let mut h = up.clone();
        let mut cin = 2;
        for j in 0..3 {
            let mut cat = h.clone();
            cat.extend(s.iter().map(|&v| v as f64));
            let m: Vec<f64> = cat
                .chunks(16)
                .flat_map(normalize)
                .map(|v| if v >= 0.0 { v } else { 0.2 * v })
                .collect();
            h = conv(&m, cin + 1, &block.convs[j]);
            cin = 3;
        }
        let skip = block.skip.as_ref().unwrap();
        let sw = gen.params.get(skip.w).data();
        let sb = gen.params.get(skip.b.unwrap()).data();
        for o in 0..3 {
            for p in 0..16 {
                let proj: f64 = sb[o] as f64 + (0..2).map(|c| sw[o * 2 + c] as f64 * up[c * 16 + p]).sum::<f64>();
                let want = h[o * 16 + p] + proj;
                let got = out.value().data()[o * 16 + p] as f64;
                assert!((got - want).abs() < 1e-4, "({o},{p}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn dropping_residual_rgb_gives_upsampled_base() {
        let gen = small(3);
        let mut s = StructuralMap::zeros(16, 16);
        for i in 0..16 {
            s.set(i, i, true);
        }
        let g = Graph::new();
        let z = g.constant(Tensor::new(vec![1, 4], vec![0.3, -0.7, 1.1, 0.0]).unwrap());
        let sv = g.constant(map_tensor(&s));
        let out = gen.forward_with(&g, z, sv, true).unwrap();
        let a0 = gen.initial(&g, sv);
        let mut x = kernels::conv2d(&a0.value(), gen.params.get(gen.to_rgb[0].w), Some(gen.params.get(gen.to_rgb[0].b.unwrap())), 1, 1);
        for _ in 0..3 {
            x = kernels::upsample_bilinear2x(&x);
        }
        let want = x.map(|v| (v.tanh() + 1.0) * 0.5);
        assert_eq!(out.value().data(), want.data());
    }

    #[test]
    fn texture_changes_output() {
        let gen = small(3);
        let mut s = StructuralMap::zeros(16, 16);
        s.set(8, 8, true);
        let a = gen.generate(&[0.0; 4], &s).unwrap();
        let b = gen.generate(&[1.0, -1.0, 0.5, 2.0], &s).unwrap();
        let diff: f32 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 0.0);
        assert_eq!((a.height(), a.width()), (b.height(), b.width()));
    }
}
