//! Joint training of the texture encoder, generator and discriminator, the
//! edge upsampler pre-training, dataset ingestion and the toy corpus.

mod config;
mod losses;
mod toyset;

use std::path::{Path, PathBuf};

use ccodec_nn::{Adam, AdamConfig, Graph, StoreGrads, Tensor, Var};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub use config::{Config, TrainConfig};
pub use losses::*;
pub use toyset::{gen_dataset, hsv_to_rgb, toy_sample, TOY_SIZE};

use crate::bitstream::{downsample_map, CodecSettings, Models};
use crate::error::{CodecError, Result};
use crate::hfgan::{map_tensor, Discriminator, Generator, HfganCheckpoint};
use crate::imagecore::{extract_edges, Image, StructuralMap};
use crate::structcodec::{sr_upsample, EdgeSrModel, EdgeSrTrainConfig};
use crate::texcodec::{image_tensor, TextureEncoder};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Sorted PNG images of a directory, skipping `map_*` files.
pub fn load_images(dir: &Path) -> Result<Vec<(PathBuf, Image)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| CodecError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let png = p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png"));
            let map = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("map_"));
            png && !map
        })
        .collect();
    paths.sort();
    paths.into_iter().map(|p| Image::load(&p).map(|img| (p, img))).collect()
}

/// One training example with every structure representation.
#[derive(Clone, Debug)]
pub struct Example {
    pub image: Image,
    pub edges: StructuralMap,
    pub low: StructuralMap,
    /// Upsampler reconstruction of `low`; what the generator sees.
    pub map: StructuralMap,
}

/// Edge extraction and downsampling; `map` starts as the extracted edges
/// until an upsampler is available.
pub fn prepare_examples(images: &[Image], settings: &CodecSettings) -> Result<Vec<Example>> {
    images
        .iter()
        .map(|img| {
            let edges = extract_edges(img, &settings.edge)?;
            let low = downsample_map(&edges, settings)?;
            Ok(Example { image: img.clone(), map: edges.clone(), edges, low })
        })
        .collect()
}

/// Replaces each example's map with the upsampler output.
pub fn restore_maps(examples: &mut [Example], sr: &EdgeSrModel, settings: &CodecSettings) -> Result<()> {
    for e in examples {
        e.map = if settings.full_res_structure { e.low.clone() } else { sr_upsample(sr, &e.low, settings.sr_threshold)? };
    }
    Ok(())
}

/// Per-step record of the CSV log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub d_loss: f64,
    pub terms: LossTerms<f64>,
    pub total: f64,
    pub val_rec: Option<f64>,
}

impl StepLog {
    pub fn all_finite(&self) -> bool {
        let t = &self.terms;
        [self.d_loss, self.total, t.gan, t.rec, t.vgg, t.ssim, t.kl, t.latent].iter().all(|v| v.is_finite())
    }
}

pub fn batch_tensors(examples: &[&Example]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let xs: Vec<_> = examples.iter().map(|e| image_tensor(&e.image)).collect();
    let ss: Vec<_> = examples.iter().map(|e| map_tensor(&e.map)).collect();
    Ok((Tensor::cat_batch(&xs)?, Tensor::cat_batch(&ss)?))
}

/// Networks plus optimizer state for the adversarial stage.
pub struct Trainer {
    pub ckpt: HfganCheckpoint,
    pub weights: LossWeights,
    perceptual: PerceptualNet<f32>,
    adam_g: Adam,
    adam_e: Adam,
    adam_d: Adam,
    clip_norm: f64,
    rng: ChaCha8Rng,
    steps_done: usize,
}

fn check_finite(step: usize, what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CodecError::NonFinite(format!("{what} = {v} at step {step}")))
    }
}

impl Trainer {
    pub fn new(cfg: &TrainConfig, weights: LossWeights) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        let gcfg = cfg.generator_config()?;
        let ckpt = HfganCheckpoint {
            generator: Generator::new(gcfg, cfg.seed.wrapping_add(1))?,
            discriminator: Discriminator::new(cfg.disc_base, cfg.seed.wrapping_add(2)),
            encoder: TextureEncoder::new(cfg.latent_dim, cfg.image_size, cfg.seed.wrapping_add(3)),
            perceptual_seed: cfg.perceptual_seed,
        };
        Ok(Self::resume(ckpt, cfg, weights))
    }

    /// Continues from existing weights with fresh optimizer state.
    pub fn resume(ckpt: HfganCheckpoint, cfg: &TrainConfig, weights: LossWeights) -> Self {
        let adam = AdamConfig { lr: cfg.lr, beta1: cfg.adam_betas.0, beta2: cfg.adam_betas.1, ..Default::default() };
        Trainer {
            perceptual: PerceptualNet::new(ckpt.perceptual_seed),
            adam_g: Adam::new(adam, &ckpt.generator.params),
            adam_e: Adam::new(adam, &ckpt.encoder.params),
            adam_d: Adam::new(adam, &ckpt.discriminator.params),
            ckpt,
            weights,
            clip_norm: cfg.clip_norm,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(4)),
            steps_done: 0,
        }
    }

    fn noise(&mut self, n: usize) -> Tensor<f32> {
        let d = self.ckpt.encoder.latent_dim();
        let data = (0..n * d).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        Tensor::new(vec![n, d], data).expect("noise shape")
    }

    /// Encoder posterior, reparameterized latent and reconstruction.
    fn reconstruct<'g>(
        &self,
        g: &'g Graph<f32>,
        x: Var<'g, f32>,
        s: Var<'g, f32>,
        eps: Tensor<f32>,
    ) -> Result<[Var<'g, f32>; 4]> {
        let (mu, lv) = self.ckpt.encoder.forward(g, x);
        let z = mu.add(lv.mul_scalar(0.5).exp().mul(g.constant(eps)));
        let fake = self.ckpt.generator.forward(g, z, s)?;
        Ok([mu, lv, z, fake])
    }

    /// The six encoder/generator terms for one reconstruction.
    #[allow(clippy::too_many_arguments)]
    fn generator_terms<'g>(
        &self,
        g: &'g Graph<f32>,
        x: Var<'g, f32>,
        s: Var<'g, f32>,
        [mu, lv, z, fake]: [Var<'g, f32>; 4],
    ) -> Result<LossTerms<Var<'g, f32>>> {
        let scores = self.ckpt.discriminator.forward(g, fake, s)?;
        let (mu_hat, _) = self.ckpt.encoder.forward(g, fake);
        Ok(LossTerms {
            gan: gan_g_loss(&scores)?,
            rec: rec_loss(x, fake)?,
            vgg: self.perceptual.loss(g, x, fake)?,
            ssim: ssim_loss(x, fake)?,
            kl: kl_loss(mu, lv)?,
            latent: latent_regression_loss(z, mu_hat)?,
        })
    }

    /// Gradients of the total objective for the generator and encoder
    /// without touching any weights.
    pub fn objective_gradients(
        &mut self,
        x: &Tensor<f32>,
        s: &Tensor<f32>,
    ) -> Result<(StoreGrads<f32>, StoreGrads<f32>, LossTerms<f64>)> {
        let eps = self.noise(x.dim(0));
        let g = Graph::new();
        let (xv, sv) = (g.constant(x.clone()), g.constant(s.clone()));
        let rec = self.reconstruct(&g, xv, sv, eps)?;
        let terms = self.generator_terms(&g, xv, sv, rec)?;
        let grads = g.backward(total_loss(&terms, &self.weights));
        Ok((grads.for_store(&self.ckpt.generator.params), grads.for_store(&self.ckpt.encoder.params), terms.values()))
    }

    /// One discriminator update on the detached reconstruction followed by
    /// one encoder+generator update against the updated discriminator.
    pub fn step(&mut self, x: &Tensor<f32>, s: &Tensor<f32>) -> Result<StepLog> {
        let step = self.steps_done;
        let eps = self.noise(x.dim(0));
        let g = Graph::new();
        let (xv, sv) = (g.constant(x.clone()), g.constant(s.clone()));
        let rec = self.reconstruct(&g, xv, sv, eps)?;
        let fake = rec[3];

        let disc = &self.ckpt.discriminator;
        let real_scores = disc.forward(&g, xv, sv)?;
        let fake_scores = disc.forward(&g, fake.detach(), sv)?;
        let (d_loss, _) = gan_losses(&real_scores, &fake_scores)?;
        let d_value = d_loss.item() as f64;
        check_finite(step, "d_loss", d_value)?;
        let mut dg = g.backward(d_loss).for_store(&disc.params);
        dg.clip_global_norm(self.clip_norm);
        self.adam_d.step(&mut self.ckpt.discriminator.params, &dg);

        let terms = self.generator_terms(&g, xv, sv, rec)?;
        let total = total_loss(&terms, &self.weights);
        let values = terms.values();
        let total_value = total.item() as f64;
        let log = StepLog { step, d_loss: d_value, terms: values, total: total_value, val_rec: None };
        if !log.all_finite() {
            return Err(CodecError::NonFinite(format!("losses at step {step}: {values:?}, total {total_value}")));
        }
        let grads = g.backward(total);
        let mut gg = grads.for_store(&self.ckpt.generator.params);
        let mut ge = grads.for_store(&self.ckpt.encoder.params);
        gg.clip_global_norm(self.clip_norm);
        ge.clip_global_norm(self.clip_norm);
        self.adam_g.step(&mut self.ckpt.generator.params, &gg);
        self.adam_e.step(&mut self.ckpt.encoder.params, &ge);
        self.steps_done += 1;
        Ok(log)
    }

    /// Mean L1 between images and reconstructions from the posterior mean.
    pub fn validation_l1(&self, examples: &[Example]) -> Result<f64> {
        if examples.is_empty() {
            return Err(CodecError::Config("validation set is empty".into()));
        }
        let mut acc = 0.0;
        for chunk in examples.chunks(16) {
            let refs: Vec<&Example> = chunk.iter().collect();
            let (x, s) = batch_tensors(&refs)?;
            let g = Graph::new();
            let xv = g.constant(x);
            let (mu, _) = self.ckpt.encoder.forward(&g, xv);
            let fake = self.ckpt.generator.forward(&g, mu, g.constant(s))?;
            acc += rec_loss(xv, fake)?.item() as f64 * chunk.len() as f64;
        }
        Ok(acc / examples.len() as f64)
    }
}

/// Outcome of [`train`].
pub struct TrainReport {
    pub models: Models,
    pub log: Vec<StepLog>,
    /// `(step, validation L1)` pairs, first at step 0.
    pub evals: Vec<(usize, f64)>,
    pub sr_losses: Vec<f64>,
    pub train_examples: Vec<Example>,
    pub val_examples: Vec<Example>,
}

fn write_log(path: &Path, log: &[StepLog]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CodecError::Format(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| CodecError::Format(format!("{}: {e}", path.display()));
    w.write_record(["step", "d_loss", "gan", "rec", "vgg", "ssim", "kl", "latent", "total", "val_rec"])
        .map_err(err)?;
    for r in log {
        let t = &r.terms;
        let mut row: Vec<String> =
            [r.d_loss, t.gan, t.rec, t.vgg, t.ssim, t.kl, t.latent, r.total].iter().map(|v| v.to_string()).collect();
        row.insert(0, r.step.to_string());
        row.push(r.val_rec.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|e| CodecError::io(path, e))
}

/// Full protocol: edge upsampler pre-training, then adversarial training of
/// the texture path on upsampled maps. Checkpoints and the CSV log go to
/// `out_dir`.
pub fn train(config: &Config, out_dir: &Path) -> Result<TrainReport> {
    let cfg = &config.train;
    cfg.validate()?;
    let loaded = load_images(&cfg.dataset_dir)?;
    if loaded.is_empty() {
        return Err(CodecError::Config(format!("no training images in {}", cfg.dataset_dir.display())));
    }
    for (p, img) in &loaded {
        if img.height() != cfg.image_size || img.width() != cfg.image_size {
            return Err(CodecError::Config(format!(
                "{} is {}x{}, training expects {n}x{n}",
                p.display(),
                img.height(),
                img.width(),
                n = cfg.image_size
            )));
        }
    }
    let images: Vec<Image> = loaded.into_iter().map(|(_, i)| i).collect();
    train_on(config, images, out_dir)
}

/// [`train`] on images already in memory; the last `val_count` are held out.
pub fn train_on(config: &Config, images: Vec<Image>, out_dir: &Path) -> Result<TrainReport> {
    let cfg = &config.train;
    cfg.validate()?;
    if images.len() <= cfg.val_count {
        return Err(CodecError::Config(format!(
            "{} images leave nothing to train on with val_count = {}",
            images.len(),
            cfg.val_count
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CodecError::io(out_dir, e))?;
    let mut examples = prepare_examples(&images, &config.codec)?;
    let split = examples.len() - cfg.val_count;

    let mut edge_sr = EdgeSrModel::new(cfg.seed.wrapping_add(5));
    let pairs: Vec<_> = examples[..split].iter().map(|e| (e.low.clone(), e.edges.clone())).collect();
    let sr_losses = if config.codec.full_res_structure || cfg.sr_steps == 0 {
        Vec::new()
    } else {
        let sr_cfg = EdgeSrTrainConfig {
            steps: cfg.sr_steps,
            batch_size: cfg.sr_batch_size,
            lr: cfg.sr_lr,
            seed: cfg.seed.wrapping_add(6),
        };
        edge_sr.train(&pairs, &sr_cfg)?
    };
    log::info!("edge upsampler trained, final loss {:?}", sr_losses.last());
    restore_maps(&mut examples, &edge_sr, &config.codec)?;
    let val = examples.split_off(split);
    let train_set = examples;

    let mut trainer = Trainer::new(cfg, config.weights)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(7));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut cursor = order.len();
    let eval_at = |step: usize| cfg.steps > 0 && (step * cfg.eval_count) % cfg.steps == 0;

    let mut evals = Vec::new();
    if !val.is_empty() {
        evals.push((0, trainer.validation_l1(&val)?));
    }
    let mut log = Vec::with_capacity(cfg.steps);
    let save = |trainer: &Trainer, log: &[StepLog]| -> Result<()> {
        Models { edge_sr: edge_sr.clone(), hfgan: trainer.ckpt.clone() }.save(out_dir)?;
        write_log(&out_dir.join(TRAIN_LOG_FILE), log)
    };
    for step in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(&train_set[order[cursor]]);
            cursor += 1;
        }
        let (x, s) = batch_tensors(&batch)?;
        let mut entry = trainer.step(&x, &s)?;
        if eval_at(step + 1) && !val.is_empty() {
            let v = trainer.validation_l1(&val)?;
            evals.push((step + 1, v));
            entry.val_rec = Some(v);
            log::info!("step {}: total {:.4} rec {:.4} val_rec {v:.4}", step + 1, entry.total, entry.terms.rec);
        }
        log.push(entry);
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            save(&trainer, &log)?;
        }
    }
    save(&trainer, &log)?;
    Ok(TrainReport {
        models: Models { edge_sr, hfgan: trainer.ckpt },
        log,
        evals,
        sr_losses,
        train_examples: train_set,
        val_examples: val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(dir: &Path) -> Config {
        let mut c = Config::default();
        c.train = TrainConfig {
            batch_size: 2,
            steps: 3,
            dataset_dir: dir.to_path_buf(),
            gen_channels: vec![8; 6],
            disc_base: 4,
            val_count: 2,
            eval_count: 3,
            sr_steps: 2,
            sr_batch_size: 2,
            ..Default::default()
        };
        c
    }

    fn toy_examples(n: usize) -> Vec<Example> {
        let imgs: Vec<Image> = (0..n).map(|i| toy_sample(3, i as u64).0).collect();
        prepare_examples(&imgs, &CodecSettings::default()).unwrap()
    }

    #[test]
    fn zero_learning_rate_changes_no_weights() {
        let mut c = tiny_config(Path::new("."));
        c.train.lr = 1e-12;
        c.train.validate().unwrap();
        let mut t = Trainer::new(&c.train, c.weights).unwrap();
        t.adam_g.cfg.lr = 0.0;
        t.adam_e.cfg.lr = 0.0;
        t.adam_d.cfg.lr = 0.0;
        let before = t.ckpt.to_archive().to_bytes();
        let ex = toy_examples(2);
        let (x, s) = batch_tensors(&ex.iter().collect::<Vec<_>>()).unwrap();
        t.step(&x, &s).unwrap();
        assert_eq!(t.ckpt.to_archive().to_bytes(), before);
        t.adam_g.cfg.lr = 1e-3;
        t.step(&x, &s).unwrap();
        assert_ne!(t.ckpt.to_archive().to_bytes(), before);
    }

    #[test]
    fn objective_reaches_all_heads() {
        let c = tiny_config(Path::new("."));
        let mut t = Trainer::new(&c.train, c.weights).unwrap();
        let ex = toy_examples(2);
        let (x, s) = batch_tensors(&ex.iter().collect::<Vec<_>>()).unwrap();
        let (gg, ge, _) = t.objective_gradients(&x, &s).unwrap();
        for (i, j, a, b) in t.ckpt.generator.affine_heads() {
            let na = gg.get(a).map_or(0.0, |v| v.sq_norm());
            let nb = gg.get(b).map_or(0.0, |v| v.sq_norm());
            assert!(na > 0.0 && nb > 0.0, "block {i} stage {j}");
        }
        for name in ["mu.weight", "logvar.weight"] {
            let id = t.ckpt.encoder.params.find(name).unwrap();
            assert!(ge.get(id).unwrap().sq_norm() > 0.0, "{name}");
        }
    }

    #[test]
    fn tiny_run_logs_finite_losses_and_checkpoints() {
        let data = tempfile::tempdir().unwrap();
        gen_dataset(data.path(), 6, 11).unwrap();
        let out = tempfile::tempdir().unwrap();
        let c = tiny_config(data.path());
        let report = train(&c, out.path()).unwrap();
        assert_eq!(report.log.len(), 3);
        assert!(report.log.iter().all(StepLog::all_finite));
        assert_eq!(report.evals.len(), 4);
        let text = std::fs::read_to_string(out.path().join(TRAIN_LOG_FILE)).unwrap();
        assert_eq!(text.lines().count(), 4);
        let models = Models::load(out.path()).unwrap();
        let e = &report.val_examples[0];
        let z = vec![0.25f32; 64];
        assert_eq!(
            models.hfgan.generator.generate(&z, &e.map).unwrap(),
            report.models.hfgan.generator.generate(&z, &e.map).unwrap()
        );
    }

    #[test]
    fn empty_dataset_is_a_config_error() {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let c = tiny_config(data.path());
        assert!(matches!(train(&c, out.path()), Err(CodecError::Config(_))));
    }
}
