use std::path::{Path, PathBuf};

use crate::bitstream::CodecSettings;
use crate::error::{CodecError, Result};
use crate::hfgan::GeneratorConfig;
use crate::texcodec::LATENT_DIM;

use super::LossWeights;

/// Optimization and data settings for [`super::train`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub adam_betas: (f64, f64),
    pub steps: usize,
    pub dataset_dir: PathBuf,
    pub image_size: usize,
    pub latent_dim: usize,
    /// Generator widths `c_0..c_k`; `k` follows from `image_size`.
    pub gen_channels: Vec<usize>,
    pub disc_base: usize,
    pub clip_norm: f64,
    pub seed: u64,
    pub perceptual_seed: u64,
    /// Images held out from the end of the sorted dataset.
    pub val_count: usize,
    /// Validation passes spread evenly over training, plus one at step 0.
    pub eval_count: usize,
    /// Checkpoint every this many steps; 0 saves only at the end.
    pub checkpoint_every: usize,
    pub sr_steps: usize,
    pub sr_batch_size: usize,
    pub sr_lr: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 2e-4,
            adam_betas: (0.5, 0.999),
            steps: 2000,
            dataset_dir: PathBuf::from("data/toy"),
            image_size: 64,
            latent_dim: LATENT_DIM,
            gen_channels: vec![64, 64, 32, 32, 16, 16],
            disc_base: 16,
            clip_norm: 10.0,
            seed: 0,
            perceptual_seed: 1234,
            val_count: 50,
            eval_count: 10,
            checkpoint_every: 0,
            sr_steps: 1500,
            sr_batch_size: 16,
            sr_lr: 1e-3,
        }
    }
}

impl TrainConfig {
    pub fn generator_config(&self) -> Result<GeneratorConfig> {
        let n = self.image_size;
        if n < 8 || !n.is_power_of_two() {
            return Err(CodecError::Config(format!("image_size {n} must be a power of two >= 8")));
        }
        let k = n.trailing_zeros() as usize - 1;
        let cfg = GeneratorConfig { k, channels: self.gen_channels.clone(), latent_dim: self.latent_dim };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CodecError::Config("batch_size must be at least 1".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CodecError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(CodecError::Config(format!("adam betas must lie in [0,1): {b1}, {b2}")));
        }
        if self.image_size % 32 != 0 {
            return Err(CodecError::Config(format!("image_size {} must be a multiple of 32", self.image_size)));
        }
        if self.eval_count == 0 || self.disc_base == 0 || self.sr_batch_size == 0 {
            return Err(CodecError::Config("eval_count, disc_base and sr_batch_size must be positive".into()));
        }
        self.generator_config().map(|_| ())
    }
}

/// Everything a config file can set.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Config {
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub codec: CodecSettings,
}

fn num(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Float(f) => Ok(*f),
        toml::Value::Integer(i) => Ok(*i as f64),
        _ => Err(CodecError::Config(format!("{key} must be a number"))),
    }
}

fn uint(key: &str, v: &toml::Value) -> Result<usize> {
    match v {
        toml::Value::Integer(i) if *i >= 0 => Ok(*i as usize),
        _ => Err(CodecError::Config(format!("{key} must be a nonnegative integer"))),
    }
}

impl Config {
    /// Parses flat `key = value` TOML. Unknown keys are an error naming all
    /// of them.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text.parse().map_err(|e| CodecError::Config(format!("config parse: {e}")))?;
        let mut c = Config::default();
        let mut unknown = Vec::new();
        for (key, v) in &table {
            let k = key.as_str();
            let t = &mut c.train;
            match k {
                "batch_size" => t.batch_size = uint(k, v)?,
                "lr" => t.lr = num(k, v)?,
                "beta1" => t.adam_betas.0 = num(k, v)?,
                "beta2" => t.adam_betas.1 = num(k, v)?,
                "steps" => t.steps = uint(k, v)?,
                "dataset_dir" => {
                    t.dataset_dir = PathBuf::from(
                        v.as_str().ok_or_else(|| CodecError::Config("dataset_dir must be a string".into()))?,
                    )
                }
                "image_size" => t.image_size = uint(k, v)?,
                "latent_dim" => t.latent_dim = uint(k, v)?,
                "gen_channels" => {
                    let arr = v
                        .as_array()
                        .ok_or_else(|| CodecError::Config("gen_channels must be an array".into()))?;
                    t.gen_channels = arr.iter().map(|x| uint(k, x)).collect::<Result<_>>()?;
                }
                "disc_base" => t.disc_base = uint(k, v)?,
                "clip_norm" => t.clip_norm = num(k, v)?,
                "seed" => t.seed = uint(k, v)? as u64,
                "perceptual_seed" => t.perceptual_seed = uint(k, v)? as u64,
                "val_count" => t.val_count = uint(k, v)?,
                "eval_count" => t.eval_count = uint(k, v)?,
                "checkpoint_every" => t.checkpoint_every = uint(k, v)?,
                "sr_steps" => t.sr_steps = uint(k, v)?,
                "sr_batch_size" => t.sr_batch_size = uint(k, v)?,
                "sr_lr" => t.sr_lr = num(k, v)?,
                "weight_gan" => c.weights.gan = num(k, v)?,
                "weight_rec" => c.weights.rec = num(k, v)?,
                "weight_ssim" => c.weights.ssim = num(k, v)?,
                "weight_vgg" => c.weights.vgg = num(k, v)?,
                "weight_latent" => c.weights.latent = num(k, v)?,
                "weight_kl" => c.weights.kl = num(k, v)?,
                "edge_sigma" => c.codec.edge.blur_sigma = num(k, v)?,
                "edge_low" => c.codec.edge.low = num(k, v)?,
                "edge_high" => c.codec.edge.high = num(k, v)?,
                "down_threshold" => c.codec.down_threshold = num(k, v)?,
                "sr_threshold" => c.codec.sr_threshold = num(k, v)?,
                "qp" => {
                    c.codec.qp = u8::try_from(uint(k, v)?)
                        .map_err(|_| CodecError::Config("qp out of range".into()))?
                }
                "full_res_structure" => {
                    c.codec.full_res_structure =
                        v.as_bool().ok_or_else(|| CodecError::Config("full_res_structure must be a bool".into()))?
                }
                _ => unknown.push(k.to_string()),
            }
        }
        if !unknown.is_empty() {
            return Err(CodecError::Config(format!("unknown config keys: {}", unknown.join(", "))));
        }
        c.train.validate()?;
        c.weights.validate()?;
        crate::texcodec::q_step(c.codec.qp).map_err(|e| CodecError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CodecError::io(path, e))?;
        Self::from_toml_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_published_settings() {
        let c = Config::default();
        assert_eq!(c.train.batch_size, 16);
        assert_eq!(c.train.lr, 0.0002);
        assert_eq!(c.train.adam_betas, (0.5, 0.999));
        assert_eq!(c.weights, LossWeights { gan: 1.0, rec: 10.0, ssim: 0.25, vgg: 0.2, latent: 1.0, kl: 0.01 });
        assert_eq!(c.codec.qp, 51);
        c.train.validate().unwrap();
        assert_eq!(c.train.generator_config().unwrap().k, 5);
    }

    #[test]
    fn parses_keys_and_lists_unknown_ones() {
        let c = Config::from_toml_str("steps = 10\nweight_rec = 5\nqp = 40\ngen_channels = [8,8,8,8,8,8]\n").unwrap();
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.weights.rec, 5.0);
        assert_eq!(c.codec.qp, 40);
        let e = Config::from_toml_str("stepz = 1\nlr = 0.1\nfoo = 2").unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, CodecError::Config(_)));
        assert!(msg.contains("stepz") && msg.contains("foo") && !msg.contains("lr"), "{msg}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["batch_size = 0", "lr = 0", "lr = -1", "qp = 52", "weight_kl = -1", "image_size = 48", "steps = \"x\""] {
            assert!(matches!(Config::from_toml_str(text), Err(CodecError::Config(_))), "{text}");
        }
    }
}
