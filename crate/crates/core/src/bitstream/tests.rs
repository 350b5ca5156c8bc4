use super::*;
use crate::hfgan::{Discriminator, Generator, GeneratorConfig};
use crate::structcodec::StructurePayload;
use crate::texcodec::{TextureEncoder, TexturePayload};
use crate::training::toy_sample;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_models() -> Models {
    Models {
        edge_sr: EdgeSrModel::new(0),
        hfgan: HfganCheckpoint {
            generator: Generator::new(GeneratorConfig::with_width(5, 16, 64), 1).unwrap(),
            discriminator: Discriminator::new(8, 2),
            encoder: TextureEncoder::new(64, 64, 3),
            perceptual_seed: 4,
        },
    }
}

fn random_stream(rng: &mut ChaCha8Rng) -> ConceptualBitstream {
    let low_h = rng.random_range(2u16..40);
    let low_w = rng.random_range(2u16..40);
    let density = rng.random_range(0.0..1.0);
    let map = StructuralMap::new(
        low_h as usize,
        low_w as usize,
        (0..low_h as usize * low_w as usize).map(|_| rng.random_bool(density) as u8).collect(),
    )
    .unwrap();
    let d = rng.random_range(1usize..100);
    let qp = rng.random_range(0u8..=51);
    let z: Vec<f32> = (0..d).map(|_| rng.random_range(-3.0f32..3.0)).collect();
    ConceptualBitstream {
        version: VERSION,
        height: low_h * 4,
        width: low_w * 4,
        flags: 0,
        structure: encode_map(&map).unwrap(),
        texture: entropy_encode(&quantize(&z, qp).unwrap().0).unwrap(),
    }
}

#[test]
fn bpp_arithmetic() {
    assert_eq!(bpp(1024, 256, 256), 0.125);
    assert_eq!(bpp(1024 / 8, 256, 256), 1024.0 / 65536.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bs = random_stream(&mut rng);
    let parts = FIXED_HEADER_LEN + 8 + bs.structure.byte_len() + bs.texture.byte_len();
    assert_eq!(bs.to_bytes().len(), parts);
    assert_eq!(bs.bpp(), bpp(parts, bs.height as usize, bs.width as usize));
}

#[test]
fn every_header_byte_corruption_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let bytes = random_stream(&mut rng).to_bytes();
        let s_len = u32::from_be_bytes(bytes[10..14].try_into().unwrap()) as usize;
        let t_at = 14 + s_len;
        let header: Vec<usize> = (0..14).chain(t_at..t_at + 4).collect();
        for &i in &header {
            for flip in [0x01u8, 0x80, 0xff] {
                let mut bad = bytes.clone();
                bad[i] ^= flip;
                match ConceptualBitstream::from_bytes(&bad) {
                    Err(CodecError::Format(_)) | Err(CodecError::Decode { .. }) => {}
                    other => panic!("byte {i} ^ {flip:#x} gave {other:?}"),
                }
            }
        }
    }
}

#[test]
fn truncated_streams_are_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bytes = random_stream(&mut rng).to_bytes();
    for n in 0..bytes.len() {
        assert!(ConceptualBitstream::from_bytes(&bytes[..n]).is_err(), "prefix {n}");
    }
}

#[test]
fn texture_payload_respects_raw_bound() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for trial in 0..200 {
        let scale = [0.1f32, 1.0, 10.0, 1e4][trial % 4];
        let z: Vec<f32> = (0..64).map(|_| rng.random_range(-1.0f32..1.0) * scale).collect();
        let p = entropy_encode(&quantize(&z, 51).unwrap().0).unwrap();
        assert!(p.bit_len <= 1024 + 32, "{} bits", p.bit_len);
    }
}

#[test]
fn flag_bit_zero_requires_full_resolution_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut bs = random_stream(&mut rng);
    bs.flags = FLAG_FULL_RES_STRUCTURE;
    assert!(bs.validate().is_err());
    let map = StructuralMap::zeros(bs.height as usize, bs.width as usize);
    let mut p = encode_map(&map).unwrap();
    p.scale = 1;
    bs.structure = p;
    bs.validate().unwrap();
    assert_eq!(ConceptualBitstream::from_bytes(&bs.to_bytes()).unwrap(), bs);
}

#[test]
fn pipeline_contracts() {
    let models = tiny_models();
    let settings = CodecSettings::default();
    let (img, _) = toy_sample(1, 0);
    let a = compress(&img, &models, &settings).unwrap();
    assert_eq!(a.to_bytes(), compress(&img, &models, &settings).unwrap().to_bytes());
    let out = decompress(&a, &models, &settings).unwrap();
    assert_eq!((out.height(), out.width()), (64, 64));

    // no divergence between the pipeline and its composition
    let low = structure_of(&img, &settings).unwrap();
    let map = sr_upsample(&models.edge_sr, &low, settings.sr_threshold).unwrap();
    let mu = models.hfgan.encoder.encode(&img).unwrap().mu;
    let z: Vec<f32> = dequantize(&quantize(&mu, settings.qp).unwrap().0).unwrap().iter().map(|&v| v as f32).collect();
    assert_eq!(out, models.hfgan.generator.generate(&z, &map).unwrap());

    assert_eq!(swap_texture(&a, &a).unwrap().to_bytes(), a.to_bytes());
    let (img_b, _) = toy_sample(1, 1);
    let b = compress(&img_b, &models, &settings).unwrap();
    let swapped = swap_texture(&a, &b).unwrap();
    assert_eq!(swapped.structure, a.structure);
    assert_eq!(swapped.texture, b.texture);
    let out_s = decompress(&swapped, &models, &settings).unwrap();
    assert_eq!((out_s.height(), out_s.width()), (64, 64));

    let own = decode_map(&a.structure).unwrap();
    let own_full = restore_structure(&own, false, &models, &settings).unwrap();
    let r = replace_structure(&a, &own_full, &settings).unwrap();
    assert_eq!(r.texture.to_bytes(), a.texture.to_bytes());
    let z0 = replace_structure(&a, &StructuralMap::zeros(64, 64), &settings).unwrap();
    let z0 = ConceptualBitstream::from_bytes(&z0.to_bytes()).unwrap();
    decompress(&z0, &models, &settings).unwrap();
    assert!(replace_structure(&a, &StructuralMap::zeros(32, 32), &settings).is_err());

    let wrong = Image::filled(32, 32, [0.5; 3]).unwrap();
    assert!(matches!(compress(&wrong, &models, &settings), Err(CodecError::Config(_))));
}

#[test]
fn swap_rejects_incompatible_textures() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_stream(&mut rng);
    let mut b = a.clone();
    b.texture.qp = if a.texture.qp == 0 { 1 } else { a.texture.qp - 1 };
    assert!(matches!(swap_texture(&a, &b), Err(CodecError::Argument(_))));
}

#[test]
fn layers_decode_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_stream(&mut rng);
    let b = random_stream(&mut rng);
    let (map_a, tex_a) = decode_layers(&a).unwrap();
    let mut mixed = a.clone();
    mixed.texture = b.texture.clone();
    assert_eq!(decode_layers(&mixed).unwrap().0, map_a);
    let mut mixed = a.clone();
    let other = StructuralMap::zeros(a.structure.low_h as usize, a.structure.low_w as usize);
    mixed.structure = encode_map(&other).unwrap();
    assert_eq!(decode_layers(&mixed).unwrap().1, tex_a);
}

fn arb_stream() -> impl Strategy<Value = ConceptualBitstream> {
    any::<u64>().prop_map(|seed| random_stream(&mut ChaCha8Rng::seed_from_u64(seed)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn container_roundtrip_is_byte_exact(bs in arb_stream()) {
        let bytes = bs.to_bytes();
        let back = ConceptualBitstream::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &bs);
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let mut b = MAGIC.to_vec();
        b.push(VERSION);
        b.extend(bytes);
        if let Ok(bs) = ConceptualBitstream::from_bytes(&b) {
            let _ = decode_layers(&bs);
        }
    }

    #[test]
    fn payloads_parse_standalone(bs in arb_stream()) {
        prop_assert_eq!(StructurePayload::from_bytes(&bs.structure.to_bytes()).unwrap(), bs.structure.clone());
        prop_assert_eq!(TexturePayload::from_bytes(&bs.texture.to_bytes()).unwrap(), bs.texture.clone());
    }
}
