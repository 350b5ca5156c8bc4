use std::path::Path;

use ccodec_nn::layers::lrelu_gain;
use ccodec_nn::{Adam, AdamConfig, Archive, Conv2d, Graph, ParamStore, Scalar, Tensor, Var, LRELU_SLOPE};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::SCALE;
use crate::error::{CodecError, Result};
use crate::imagecore::{binarize, Raster, StructuralMap};

pub const ESR_MAGIC: [u8; 4] = *b"ESR1";
const BCE_EPS: f64 = 1e-7;

/// Summed binary cross-entropy between edge probabilities and a binary
/// target of the same shape. Predictions are clamped to `[1e-7, 1-1e-7]`.
pub fn bce_loss<'g, T: Scalar>(pred: Var<'g, T>, target: Var<'g, T>) -> Result<Var<'g, T>> {
    if pred.shape() != target.shape() {
        return Err(CodecError::Argument(format!(
            "bce: prediction {:?} vs target {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let pos = target.mul(p.log());
    let neg = target.neg().add_scalar(1.0).mul(p.neg().add_scalar(1.0).log());
    Ok(pos.add(neg).sum().neg())
}

/// Three 3x3 conv layers (16, 32, 16 channels) and a pixel-shuffle x4 head
/// with sigmoid output.
#[derive(Clone, Debug)]
pub struct EdgeSrModel {
    pub params: ParamStore<f32>,
    body: [Conv2d; 3],
    head: Conv2d,
    scale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeSrTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EdgeSrTrainConfig {
    fn default() -> Self {
        EdgeSrTrainConfig { steps: 1500, batch_size: 16, lr: 2e-3, seed: 0 }
    }
}

impl EdgeSrModel {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let gain = lrelu_gain(LRELU_SLOPE);
        let scale = SCALE as usize;
        let body = [
            Conv2d::same3(&mut ps, "conv1", 1, 16, gain, &mut rng),
            Conv2d::same3(&mut ps, "conv2", 16, 32, gain, &mut rng),
            Conv2d::same3(&mut ps, "conv3", 32, 16, gain, &mut rng),
        ];
        let head = Conv2d::same3(&mut ps, "head", 16, scale * scale, 1.0, &mut rng);
        // Edges are rare; start from a low prior.
        ps.get_mut(head.b.unwrap()).data_mut().fill(-2.0);
        EdgeSrModel { params: ps, body, head, scale }
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    /// `N×1×h×w` low-resolution maps to `N×1×4h×4w` edge probabilities.
    pub fn forward<'g>(&self, g: &'g Graph<f32>, low: Var<'g, f32>) -> Var<'g, f32> {
        let mut x = low;
        for conv in &self.body {
            x = conv.forward(g, &self.params, x).leaky_relu(LRELU_SLOPE);
        }
        self.head.forward(g, &self.params, x).pixel_shuffle(self.scale).sigmoid()
    }

    /// Edge probability raster for one low-resolution map.
    pub fn predict(&self, low: &StructuralMap) -> Raster {
        let (h, w) = (low.height(), low.width());
        let g = Graph::new();
        let x = g.constant(map_tensor(low));
        let y = self.forward(&g, x);
        let data = y.value().data().iter().map(|&v| v as f64).collect();
        Raster::new(1, h * self.scale, w * self.scale, data).expect("shape from forward pass")
    }

    /// Fits the model on `(low, full)` pairs with summed BCE and Adam.
    /// Returns the per-pixel mean loss of every step.
    pub fn train(&mut self, pairs: &[(StructuralMap, StructuralMap)], cfg: &EdgeSrTrainConfig) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(CodecError::Config("edge SR training set is empty".into()));
        }
        for (low, full) in pairs {
            if full.height() != low.height() * self.scale || full.width() != low.width() * self.scale {
                return Err(CodecError::Argument("edge SR pair dimensions disagree with scale".into()));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut adam = Adam::new(AdamConfig { lr: cfg.lr, beta1: 0.9, ..Default::default() }, &self.params);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut cursor = order.len();
        let mut log = Vec::with_capacity(cfg.steps);
        for step in 0..cfg.steps {
            let mut lows = Vec::new();
            let mut fulls = Vec::new();
            for _ in 0..cfg.batch_size.max(1) {
                if cursor == order.len() {
                    order.shuffle(&mut rng);
                    cursor = 0;
                }
                let (low, full) = &pairs[order[cursor]];
                cursor += 1;
                lows.push(map_tensor(low));
                fulls.push(map_tensor(full));
            }
            let g = Graph::new();
            let x = g.constant(Tensor::cat_batch(&lows)?);
            let t = g.constant(Tensor::cat_batch(&fulls)?);
            let loss = bce_loss(self.forward(&g, x), t)?;
            let value = loss.item() as f64;
            let pixels = t.value().len() as f64;
            if !value.is_finite() {
                return Err(CodecError::NonFinite(format!("edge SR loss at step {step}")));
            }
            let grads = g.backward(loss).for_store(&self.params);
            adam.step(&mut self.params, &grads);
            log.push(value / pixels);
        }
        Ok(log)
    }

    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(ESR_MAGIC);
        a.set_meta("scale", self.scale);
        a.push_store("esr", &self.params);
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let scale: usize = a.meta_parse("scale")?;
        if scale != SCALE as usize {
            return Err(CodecError::Format(format!("edge SR checkpoint has scale {scale}, codec uses {SCALE}")));
        }
        let mut m = Self::new(0);
        a.load_store("esr", &mut m.params)?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path).map_err(|e| with_path(e, path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CodecError::MissingCheckpoint(path.to_path_buf()));
        }
        let a = Archive::load(path, ESR_MAGIC).map_err(|e| with_path(e, path))?;
        Self::from_archive(&a)
    }
}

pub(crate) fn with_path(e: ccodec_nn::NnError, path: &Path) -> CodecError {
    match e {
        ccodec_nn::NnError::Io(io) => CodecError::io(path, io),
        other => CodecError::Format(format!("{}: {other}", path.display())),
    }
}

fn map_tensor(m: &StructuralMap) -> Tensor<f32> {
    let data = m.data().iter().map(|&v| v as f32).collect();
    Tensor::new(vec![1, 1, m.height(), m.width()], data).expect("map shape")
}

/// Restores a full-resolution binary map from its downsampled form.
pub fn sr_upsample(model: &EdgeSrModel, low: &StructuralMap, threshold: f64) -> Result<StructuralMap> {
    if model.scale() != SCALE as usize {
        return Err(CodecError::Argument(format!(
            "edge SR model scale {} does not match codec scale {SCALE}",
            model.scale()
        )));
    }
    Ok(binarize(&model.predict(low), threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ccodec_nn::gradcheck::check;
    use rand::Rng;

    fn bce_oracle(pred: &[f64], target: &[f64]) -> f64 {
        let mut s = 0.0;
        for (&p, &y) in pred.iter().zip(target) {
            let p = p.clamp(1e-7, 1.0 - 1e-7);
            s -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
        }
        s
    }

    fn bce_value(pred: &[f64], target: &[f64], shape: &[usize]) -> f64 {
        let g = Graph::<f64>::new();
        let p = g.constant(Tensor::new(shape.to_vec(), pred.to_vec()).unwrap());
        let t = g.constant(Tensor::new(shape.to_vec(), target.to_vec()).unwrap());
        bce_loss(p, t).unwrap().item()
    }

    #[test]
    fn bce_at_half_is_n_ln2() {
        let n = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target: Vec<f64> = (0..n).map(|_| rng.random_bool(0.3) as u8 as f64).collect();
        let v = bce_value(&vec![0.5; n], &target, &[1, 1, 8, 8]);
        let want = n as f64 * std::f64::consts::LN_2;
        assert!(((v - want) / want).abs() < 1e-6);
    }

    #[test]
    fn bce_perfect_prediction_is_tiny() {
        let target: Vec<f64> = (0..16).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let v = bce_value(&target, &target, &[1, 1, 4, 4]);
        assert!(v >= 0.0 && v <= 16.0 * -(1.0f64 - 1e-7).ln() * 1.0001);
    }

    #[test]
    fn bce_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pred: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..1.0)).collect();
        let target: Vec<f64> = (0..64).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let v = bce_value(&pred, &target, &[1, 1, 8, 8]);
        let want = bce_oracle(&pred, &target);
        assert!(((v - want) / want).abs() < 1e-6);
        assert!(v >= 0.0);
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pred = Tensor::new(vec![1, 1, 8, 8], (0..64).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap();
        let target = Tensor::new(vec![1, 1, 8, 8], (0..64).map(|_| rng.random_bool(0.4) as u8 as f64).collect()).unwrap();
        let r = check(&pred, 1e-4, 1e-6, |g, p| bce_loss(p, g.constant(target.clone())).unwrap());
        assert!(r.max_rel_err < 1e-3, "{}", r.max_rel_err);
    }

    #[test]
    fn bce_shape_mismatch_is_error() {
        let g = Graph::<f64>::new();
        let p = g.constant(Tensor::zeros(vec![1, 1, 2, 2]));
        let t = g.constant(Tensor::zeros(vec![1, 1, 2, 3]));
        assert!(bce_loss(p, t).is_err());
    }

    #[test]
    fn output_is_four_times_larger_and_deterministic() {
        let m = EdgeSrModel::new(1);
        let low = StructuralMap::new(3, 5, (0..15).map(|i| (i % 2) as u8).collect()).unwrap();
        let a = sr_upsample(&m, &low, 0.5).unwrap();
        assert_eq!((a.height(), a.width()), (12, 20));
        assert_eq!(a, sr_upsample(&m, &low, 0.5).unwrap());
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = EdgeSrModel::new(2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("esr.ckpt");
        m.save(&p).unwrap();
        let back = EdgeSrModel::load(&p).unwrap();
        let low = StructuralMap::new(4, 4, vec![1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0, 1, 1, 1, 1]).unwrap();
        assert_eq!(m.predict(&low), back.predict(&low));
        assert!(matches!(EdgeSrModel::load(&dir.path().join("nope")), Err(CodecError::MissingCheckpoint(_))));
    }

    #[test]
    fn learns_empty_maps() {
        let mut m = EdgeSrModel::new(3);
        let pairs = vec![(StructuralMap::zeros(4, 4), StructuralMap::zeros(16, 16))];
        let cfg = EdgeSrTrainConfig { steps: 30, batch_size: 2, lr: 1e-2, seed: 1 };
        let log = m.train(&pairs, &cfg).unwrap();
        assert!(log.last().unwrap() < &log[0]);
        assert_eq!(sr_upsample(&m, &StructuralMap::zeros(4, 4), 0.5).unwrap().count_ones(), 0);
    }
}
