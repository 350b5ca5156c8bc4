//! Hierarchical fusion generator, conditional discriminator and the joint
//! checkpoint format.

mod discriminator;
mod generator;

use std::path::Path;

use ccodec_nn::Archive;

pub use discriminator::{Discriminator, DISC_STAGES};
pub use generator::{map_tensor, Generator, GeneratorConfig, ADAIN_EPS};

use crate::error::{CodecError, Result};
use crate::structcodec::with_path;
use crate::texcodec::TextureEncoder;

pub const HFG_MAGIC: [u8; 4] = *b"HFG1";

/// Everything the texture path needs: generator, discriminator, texture
/// encoder and the seed of the frozen perceptual feature net.
#[derive(Clone, Debug)]
pub struct HfganCheckpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub encoder: TextureEncoder,
    pub perceptual_seed: u64,
}

fn join(v: &[usize]) -> String {
    v.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(",")
}

impl HfganCheckpoint {
    pub fn to_archive(&self) -> Archive {
        let mut a = Archive::new(HFG_MAGIC);
        let cfg = &self.generator.cfg;
        a.set_meta("k", cfg.k);
        a.set_meta("d", cfg.latent_dim);
        a.set_meta("channels", join(&cfg.channels));
        a.set_meta("image_size", self.encoder.image_size());
        a.set_meta("disc_base", self.discriminator.base());
        a.set_meta("perceptual_seed", self.perceptual_seed);
        a.push_store("gen", &self.generator.params);
        a.push_store("disc", &self.discriminator.params);
        a.push_store("enc", &self.encoder.params);
        a
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        let channels = a
            .meta("channels")
            .ok_or_else(|| CodecError::Format("checkpoint lacks channel schedule".into()))?
            .split(',')
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| CodecError::Format(format!("bad channel schedule: {e}")))?;
        let cfg = GeneratorConfig { k: a.meta_parse("k")?, channels, latent_dim: a.meta_parse("d")? };
        let image_size: usize = a.meta_parse("image_size")?;
        if image_size != cfg.output_size() {
            return Err(CodecError::Format(format!(
                "checkpoint image size {image_size} disagrees with k={} generator",
                cfg.k
            )));
        }
        let mut generator = Generator::new(cfg.clone(), 0)?;
        let mut discriminator = Discriminator::new(a.meta_parse("disc_base")?, 0);
        let mut encoder = TextureEncoder::new(cfg.latent_dim, image_size, 0);
        a.load_store("gen", &mut generator.params)?;
        a.load_store("disc", &mut discriminator.params)?;
        a.load_store("enc", &mut encoder.params)?;
        Ok(HfganCheckpoint { generator, discriminator, encoder, perceptual_seed: a.meta_parse("perceptual_seed")? })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive().save(path).map_err(|e| with_path(e, path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(CodecError::MissingCheckpoint(path.to_path_buf()));
        }
        let a = Archive::load(path, HFG_MAGIC).map_err(|e| with_path(e, path))?;
        Self::from_archive(&a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::StructuralMap;

    #[test]
    fn save_load_infer_is_bitwise_stable() {
        let cfg = GeneratorConfig::with_width(3, 16, 8);
        let ck = HfganCheckpoint {
            generator: Generator::new(cfg, 1).unwrap(),
            discriminator: Discriminator::new(8, 2),
            encoder: TextureEncoder::new(8, 16, 3),
            perceptual_seed: 77,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("hfg.ckpt");
        ck.save(&p).unwrap();
        let back = HfganCheckpoint::load(&p).unwrap();
        assert_eq!(back.perceptual_seed, 77);
        assert_eq!(back.to_archive().to_bytes(), ck.to_archive().to_bytes());
        let mut s = StructuralMap::zeros(16, 16);
        s.set(5, 5, true);
        let z = [0.1, 0.2, -0.3, 0.4, 0.0, 1.0, -1.0, 0.5];
        assert_eq!(ck.generator.generate(&z, &s).unwrap(), back.generator.generate(&z, &s).unwrap());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        crate::structcodec::EdgeSrModel::new(0).save(&p).unwrap();
        assert!(matches!(HfganCheckpoint::load(&p), Err(CodecError::Format(_))));
    }
}
