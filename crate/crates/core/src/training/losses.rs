use std::rc::Rc;

use ccodec_nn::layers::lrelu_gain;
use ccodec_nn::{Conv2d, Graph, ParamStore, Scalar, Tensor, Var, LRELU_SLOPE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CodecError, Result};
use crate::imagecore::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Weights of the six training terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gan: f64,
    pub rec: f64,
    pub ssim: f64,
    pub vgg: f64,
    pub latent: f64,
    pub kl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { gan: 1.0, rec: 10.0, ssim: 0.25, vgg: 0.2, latent: 1.0, kl: 0.01 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.gan, self.rec, self.ssim, self.vgg, self.latent, self.kl];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(CodecError::Config(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// One value per training term; `gan` is the generator-side adversarial loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms<V> {
    pub gan: V,
    pub rec: V,
    pub vgg: V,
    pub ssim: V,
    pub kl: V,
    pub latent: V,
}

impl LossTerms<f64> {
    pub fn weighted(&self, w: &LossWeights) -> f64 {
        w.gan * self.gan
            + w.rec * self.rec
            + w.vgg * self.vgg
            + w.ssim * self.ssim
            + w.kl * self.kl
            + w.latent * self.latent
    }
}

impl<'g, T: Scalar> LossTerms<Var<'g, T>> {
    pub fn values(&self) -> LossTerms<f64> {
        LossTerms {
            gan: self.gan.item().as_f64(),
            rec: self.rec.item().as_f64(),
            vgg: self.vgg.item().as_f64(),
            ssim: self.ssim.item().as_f64(),
            kl: self.kl.item().as_f64(),
            latent: self.latent.item().as_f64(),
        }
    }
}

/// Weighted sum of the six terms on the graph.
pub fn total_loss<'g, T: Scalar>(t: &LossTerms<Var<'g, T>>, w: &LossWeights) -> Var<'g, T> {
    t.gan
        .mul_scalar(w.gan)
        .add(t.rec.mul_scalar(w.rec))
        .add(t.vgg.mul_scalar(w.vgg))
        .add(t.ssim.mul_scalar(w.ssim))
        .add(t.kl.mul_scalar(w.kl))
        .add(t.latent.mul_scalar(w.latent))
}

fn same_shape<T: Scalar>(what: &str, a: &Var<'_, T>, b: &Var<'_, T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CodecError::Argument(format!("{what}: shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute difference.
pub fn l1_loss<'g, T: Scalar>(a: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("l1", &a, &b)?;
    Ok(a.sub(b).abs().mean())
}

/// Pixel reconstruction loss over all pixels and channels.
pub fn rec_loss<'g, T: Scalar>(x: Var<'g, T>, x_hat: Var<'g, T>) -> Result<Var<'g, T>> {
    l1_loss(x, x_hat)
}

/// Normalized 1-D Gaussian taps for the SSIM window.
pub fn ssim_kernel() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let taps: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Mean local SSIM of `N×C×H×W` batches on their channel-mean grayscale,
/// averaged over the batch. Positions are the valid window placements.
pub fn ssim<'g, T: Scalar>(x: Var<'g, T>, y: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("ssim", &x, &y)?;
    let s = x.shape();
    if s.len() != 4 || s[2] < SSIM_WINDOW || s[3] < SSIM_WINDOW {
        return Err(CodecError::Argument(format!(
            "ssim needs N×C×H×W inputs of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {s:?}"
        )));
    }
    let k = Rc::new(ssim_kernel());
    let gx = x.mean_axes(&[1]);
    let gy = y.mean_axes(&[1]);
    let filt = |v: Var<'g, T>| v.sep_filter_valid(k.clone());
    let mx = filt(gx);
    let my = filt(gy);
    let mxx = mx.sqr();
    let myy = my.sqr();
    let mxy = mx.mul(my);
    let vx = filt(gx.sqr()).sub(mxx);
    let vy = filt(gy.sqr()).sub(myy);
    let cxy = filt(gx.mul(gy)).sub(mxy);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let num = mxy.mul_scalar(2.0).add_scalar(c1).mul(cxy.mul_scalar(2.0).add_scalar(c2));
    let den = mxx.add(myy).add_scalar(c1).mul(vx.add(vy).add_scalar(c2));
    Ok(num.div(den).mean())
}

/// `1 - ssim`.
pub fn ssim_loss<'g, T: Scalar>(x: Var<'g, T>, y: Var<'g, T>) -> Result<Var<'g, T>> {
    Ok(ssim(x, y)?.neg().add_scalar(1.0))
}

fn image_batch(img: &Image) -> Tensor<f64> {
    let data = img.data().iter().map(|&v| v as f64).collect();
    Tensor::new(vec![1, 3, img.height(), img.width()], data).expect("image shape")
}

/// SSIM between two images, evaluated in f64.
pub fn ssim_metric(a: &Image, b: &Image) -> Result<f64> {
    if (a.height(), a.width()) != (b.height(), b.width()) {
        return Err(CodecError::Argument(format!(
            "ssim: {}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let g = Graph::new();
    let s = ssim(g.constant(image_batch(a)), g.constant(image_batch(b)))?;
    Ok(s.item())
}

/// Least-squares adversarial losses over all scales, each scale weighted
/// equally: `(d_loss, g_loss)`.
pub fn gan_losses<'g, T: Scalar>(real: &[Var<'g, T>], fake: &[Var<'g, T>]) -> Result<(Var<'g, T>, Var<'g, T>)> {
    if real.is_empty() || real.len() != fake.len() {
        return Err(CodecError::Argument(format!("gan: {} real vs {} fake score maps", real.len(), fake.len())));
    }
    let n = real.len() as f64;
    let mut d = None::<Var<'g, T>>;
    let mut gl = None::<Var<'g, T>>;
    for (r, f) in real.iter().zip(fake) {
        let dr = r.add_scalar(-1.0).sqr().mean().add(f.sqr().mean()).mul_scalar(0.5 / n);
        let gr = f.add_scalar(-1.0).sqr().mean().mul_scalar(0.5 / n);
        d = Some(d.map_or(dr, |v| v.add(dr)));
        gl = Some(gl.map_or(gr, |v| v.add(gr)));
    }
    Ok((d.unwrap(), gl.unwrap()))
}

/// Generator-side least-squares loss alone.
pub fn gan_g_loss<'g, T: Scalar>(fake: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    if fake.is_empty() {
        return Err(CodecError::Argument("gan: no score maps".into()));
    }
    let n = fake.len() as f64;
    let mut acc = fake[0].add_scalar(-1.0).sqr().mean();
    for f in &fake[1..] {
        acc = acc.add(f.add_scalar(-1.0).sqr().mean());
    }
    Ok(acc.mul_scalar(0.5 / n))
}

/// KL divergence of `N(mu, exp(logvar))` from `N(0, I)`, summed over latent
/// dimensions and averaged over the batch (`N×d` inputs).
pub fn kl_loss<'g, T: Scalar>(mu: Var<'g, T>, logvar: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("kl", &mu, &logvar)?;
    let s = mu.shape();
    if s.len() != 2 {
        return Err(CodecError::Argument(format!("kl expects N×d inputs, got {s:?}")));
    }
    let per = mu.sqr().add(logvar.exp()).sub(logvar).add_scalar(-1.0);
    Ok(per.sum().mul_scalar(0.5 / s[0] as f64))
}

/// `mean |z - mu_hat|`, where `mu_hat` is the posterior mean re-extracted
/// from the reconstruction.
pub fn latent_regression_loss<'g, T: Scalar>(z: Var<'g, T>, mu_hat: Var<'g, T>) -> Result<Var<'g, T>> {
    l1_loss(z, mu_hat)
}

pub const PERCEPTUAL_CHANNELS: [usize; 3] = [16, 32, 64];

/// Frozen random-weight convolutional pyramid used for feature matching.
///
/// Stage 1 is a stride-1 3x3 conv, stages 2 and 3 are stride-2 3x3 convs,
/// each followed by a leaky ReLU. Inputs are centred by subtracting 0.5.
#[derive(Clone, Debug)]
pub struct PerceptualNet<T: Scalar> {
    params: ParamStore<T>,
    stages: Vec<Conv2d>,
    seed: u64,
}

impl<T: Scalar> PerceptualNet<T> {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamStore::<f64>::frozen();
        let gain = lrelu_gain(LRELU_SLOPE);
        let mut cin = 3;
        let stages = PERCEPTUAL_CHANNELS
            .iter()
            .enumerate()
            .map(|(i, &cout)| {
                let stride = if i == 0 { 1 } else { 2 };
                let c = Conv2d::new(&mut ps, &format!("feat{i}"), cin, cout, 3, stride, 1, gain, &mut rng);
                cin = cout;
                c
            })
            .collect();
        PerceptualNet { params: ps.cast(), stages, seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Feature maps at each of the three levels.
    pub fn features<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Vec<Var<'g, T>> {
        let mut h = x.add_scalar(-0.5);
        self.stages
            .iter()
            .map(|c| {
                h = c.forward(g, &self.params, h).leaky_relu(LRELU_SLOPE);
                h
            })
            .collect()
    }

    /// Sum over levels of the mean absolute feature difference.
    pub fn loss<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>, x_hat: Var<'g, T>) -> Result<Var<'g, T>> {
        same_shape("perceptual", &x, &x_hat)?;
        let fa = self.features(g, x);
        let fb = self.features(g, x_hat);
        let mut acc = None::<Var<'g, T>>;
        for (a, b) in fa.into_iter().zip(fb) {
            let l = a.sub(b).abs().mean();
            acc = Some(acc.map_or(l, |v| v.add(l)));
        }
        Ok(acc.expect("three levels"))
    }
}
