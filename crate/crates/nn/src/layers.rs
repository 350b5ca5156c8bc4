use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Negative slope used by every leaky ReLU in the codec networks.
pub const LRELU_SLOPE: f64 = 0.2;

fn he_normal<T: Scalar, R: Rng + ?Sized>(shape: Vec<usize>, fan_in: usize, gain: f64, rng: &mut R) -> Tensor<T> {
    let std = gain / (fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("valid std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(dist.sample(rng))).collect();
    Tensor::new(shape, data).expect("init shape")
}

/// He gain for a leaky ReLU with the given negative slope.
pub fn lrelu_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = ps.add(
            format!("{name}.weight"),
            he_normal(vec![out_channels, in_channels, kernel, kernel], fan_in, gain, rng),
        );
        let b = Some(ps.add(format!("{name}.bias"), Tensor::zeros(vec![out_channels])));
        Conv2d { w, b, in_channels, out_channels, kernel, stride, pad }
    }

    /// 3x3, stride 1, same padding.
    pub fn same3<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        Self::new(ps, name, cin, cout, 3, 1, 1, gain, rng)
    }

    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, ps: &ParamStore<T>, x: Var<'g, T>) -> Var<'g, T> {
        let w = g.param(ps, self.w);
        let b = self.b.map(|b| g.param(ps, b));
        x.conv2d(w, b, self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(
            format!("{name}.weight"),
            he_normal(vec![out_features, in_features], in_features, gain, rng),
        );
        let b = ps.add(format!("{name}.bias"), Tensor::zeros(vec![out_features]));
        Linear { w, b, in_features, out_features }
    }

    /// Linear layer with a constant initial bias, e.g. AdaIN scales starting at 1.
    pub fn with_bias<T: Scalar, R: Rng + ?Sized>(
        ps: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        gain: f64,
        bias: f64,
        rng: &mut R,
    ) -> Self {
        let l = Self::new(ps, name, in_features, out_features, gain, rng);
        ps.get_mut(l.b).data_mut().fill(T::from_f64_lossy(bias));
        l
    }

    pub fn forward<'g, T: Scalar>(&self, g: &'g Graph<T>, ps: &ParamStore<T>, x: Var<'g, T>) -> Var<'g, T> {
        x.linear(g.param(ps, self.w), Some(g.param(ps, self.b)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_layer_output_shape_and_init_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamStore::<f32>::new();
        let conv = Conv2d::new(&mut ps, "c", 8, 16, 3, 2, 1, 1.0, &mut rng);
        let w = ps.get(conv.w);
        let std = (w.sq_norm() / w.len() as f64).sqrt();
        assert!((std - (1.0 / 72f64).sqrt()).abs() < 0.03);
        let g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![2, 8, 10, 10]));
        assert_eq!(conv.forward(&g, &ps, x).shape(), vec![2, 16, 5, 5]);
    }
}
