use ccodec_nn::layers::lrelu_gain;
use ccodec_nn::{Conv2d, Graph, ParamStore, Var, LRELU_SLOPE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};

pub const DISC_STAGES: usize = 4;

#[derive(Clone, Debug)]
struct Scale {
    stages: Vec<Conv2d>,
    out: Conv2d,
}

/// Two-scale conditional patch discriminator on `[image; edge map]`.
///
/// Each scale has four stride-2 3x3 conv stages and a 3x3 output conv with
/// raw least-squares scores. The second scale sees the input average-pooled
/// by 2.
#[derive(Clone, Debug)]
pub struct Discriminator {
    pub params: ParamStore<f32>,
    scales: Vec<Scale>,
    base: usize,
}

impl Discriminator {
    pub fn new(base: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let gain = lrelu_gain(LRELU_SLOPE);
        let scales = (0..2)
            .map(|s| {
                let mut cin = 4;
                let stages = (0..DISC_STAGES)
                    .map(|j| {
                        let cout = base << j.min(2);
                        let c = Conv2d::new(&mut ps, &format!("d{s}.conv{j}"), cin, cout, 3, 2, 1, gain, &mut rng);
                        cin = cout;
                        c
                    })
                    .collect();
                let out = Conv2d::same3(&mut ps, &format!("d{s}.out"), cin, 1, 1.0, &mut rng);
                Scale { stages, out }
            })
            .collect();
        Discriminator { params: ps, scales, base }
    }

    pub fn base(&self) -> usize {
        self.base
    }

    /// Score maps for `N×3×H×W` images conditioned on `N×1×H×W` maps:
    /// `H/16` per side at full scale, `H/32` at half scale.
    pub fn forward<'g>(&self, g: &'g Graph<f32>, img: Var<'g, f32>, s: Var<'g, f32>) -> Result<Vec<Var<'g, f32>>> {
        let (is, ss) = (img.shape(), s.shape());
        if is.len() != 4 || is[1] != 3 || ss != [is[0], 1, is[2], is[3]] {
            return Err(CodecError::Argument(format!(
                "discriminator input {is:?} with condition {ss:?}"
            )));
        }
        if is[2] % 32 != 0 || is[3] % 32 != 0 {
            return Err(CodecError::Argument(format!("discriminator needs sides divisible by 32, got {is:?}")));
        }
        let x = g.concat(&[img, s]);
        let mut inputs = vec![x, x.avg_pool(2)];
        let mut out = Vec::with_capacity(2);
        for (scale, input) in self.scales.iter().zip(inputs.drain(..)) {
            let mut h = input;
            for conv in &scale.stages {
                h = conv.forward(g, &self.params, h).leaky_relu(LRELU_SLOPE);
            }
            out.push(scale.out.forward(g, &self.params, h));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccodec_nn::Tensor;

    #[test]
    fn score_map_shapes_and_determinism() {
        let d = Discriminator::new(8, 3);
        let g = Graph::new();
        let img = g.constant(Tensor::full(vec![2, 3, 64, 64], 0.5));
        let s = g.constant(Tensor::zeros(vec![2, 1, 64, 64]));
        let a = d.forward(&g, img, s).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a[0].shape(), vec![2, 1, 4, 4]);
        assert_eq!(a[1].shape(), vec![2, 1, 2, 2]);
        let b = d.forward(&g, img, s).unwrap();
        assert_eq!(a[0].value().data(), b[0].value().data());
        let bad = g.constant(Tensor::zeros(vec![2, 1, 32, 32]));
        assert!(d.forward(&g, img, bad).is_err());
    }
}
