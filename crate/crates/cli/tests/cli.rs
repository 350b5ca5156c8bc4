use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ccodec::bitstream::{compress, CodecSettings, ConceptualBitstream, Models, VERSION};
use ccodec::hfgan::{Discriminator, Generator, GeneratorConfig, HfganCheckpoint};
use ccodec::imagecore::{Image, StructuralMap};
use ccodec::structcodec::{encode_map, EdgeSrModel};
use ccodec::texcodec::{entropy_encode, quantize, TextureEncoder};
use ccodec::training::toy_sample;

fn ccodec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccodec")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn tiny_models(dir: &Path) -> Models {
    let m = Models {
        edge_sr: EdgeSrModel::new(0),
        hfgan: HfganCheckpoint {
            generator: Generator::new(GeneratorConfig::with_width(5, 16, 64), 1).unwrap(),
            discriminator: Discriminator::new(8, 2),
            encoder: TextureEncoder::new(64, 64, 3),
            perceptual_seed: 4,
        },
    };
    m.save(dir).unwrap();
    m
}

fn toy_pngs(dir: &Path, n: usize) -> Vec<PathBuf> {
    std::fs::create_dir_all(dir).unwrap();
    (0..n)
        .map(|i| {
            let p = dir.join(format!("img_{i}.png"));
            toy_sample(3, i as u64).0.save(&p).unwrap();
            p
        })
        .collect()
}

#[test]
fn print_bpp_of_a_kilobyte_stream() {
    let tmp = tempfile::tempdir().unwrap();
    let map = StructuralMap::zeros(64, 64);
    let mut bs = ConceptualBitstream {
        version: VERSION,
        height: 256,
        width: 256,
        flags: 0,
        structure: encode_map(&map).unwrap(),
        texture: entropy_encode(&quantize(&[0.0f32; 64], 51).unwrap().0).unwrap(),
    };
    // pad the structure payload so the whole stream is exactly 1024 bytes
    let pad = 1024 - bs.byte_len();
    bs.structure.bits.extend(std::iter::repeat_n(0u8, pad));
    bs.structure.bit_len = bs.structure.bits.len() as u32 * 8;
    assert_eq!(bs.to_bytes().len(), 1024);
    let path = tmp.path().join("k.ccb");
    std::fs::write(&path, bs.to_bytes()).unwrap();
    let o = ccodec(&["inspect", "--print-bpp", s(&path)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(stdout(&o).trim(), "0.125");
}

#[test]
fn compress_decompress_roundtrip_matches_library() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("ck");
    let models = tiny_models(&ck);
    let img = &toy_pngs(&tmp.path().join("imgs"), 1)[0];
    let ccb = tmp.path().join("a.ccb");
    let png = tmp.path().join("a.png");
    let o = ccodec(&["--checkpoint-dir", s(&ck), "compress", s(img), s(&ccb), "--print-bpp"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let bytes = std::fs::read(&ccb).unwrap();
    let expect = compress(&Image::load(img).unwrap(), &models, &CodecSettings::default()).unwrap();
    assert_eq!(bytes, expect.to_bytes());
    let bpp: f64 = stdout(&o).trim().parse().unwrap();
    assert_eq!(bpp, bytes.len() as f64 * 8.0 / 4096.0);

    let o = ccodec(&["--checkpoint-dir", s(&ck), "decompress", s(&ccb), s(&png)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let out = Image::load(&png).unwrap();
    assert_eq!((out.height(), out.width()), (64, 64));

    let o = ccodec(&["inspect", s(&ccb)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("size 64x64"), "{}", stdout(&o));
}

#[test]
fn manipulation_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("ck");
    tiny_models(&ck);
    let imgs = toy_pngs(&tmp.path().join("imgs"), 2);
    let a = tmp.path().join("a.ccb");
    let b = tmp.path().join("b.ccb");
    for (img, out) in imgs.iter().zip([&a, &b]) {
        assert_eq!(ccodec(&["--checkpoint-dir", s(&ck), "compress", s(img), s(out)]).status.code(), Some(0));
    }
    let sw = tmp.path().join("sw.ccb");
    let dec = tmp.path().join("sw.png");
    let o = ccodec(&["--checkpoint-dir", s(&ck), "manipulate", "swap-texture", s(&a), s(&b), "-o", s(&sw), "--decode", s(&dec)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let [ra, rb, rs] = [&a, &b, &sw].map(|p| ConceptualBitstream::from_bytes(&std::fs::read(p).unwrap()).unwrap());
    assert_eq!(rs.structure, ra.structure);
    assert_eq!(rs.texture, rb.texture);
    assert!(dec.exists());

    let map = tmp.path().join("edit.png");
    StructuralMap::zeros(64, 64).save(&map).unwrap();
    let ed = tmp.path().join("ed.ccb");
    let o = ccodec(&["manipulate", "edit-structure", s(&a), s(&map), "-o", s(&ed)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let re = ConceptualBitstream::from_bytes(&std::fs::read(&ed).unwrap()).unwrap();
    assert_eq!(re.texture, ra.texture);
}

#[test]
fn eval_writes_rows_and_means() {
    let tmp = tempfile::tempdir().unwrap();
    let ck = tmp.path().join("ck");
    tiny_models(&ck);
    let corpus = tmp.path().join("imgs");
    toy_pngs(&corpus, 3);
    let csv = tmp.path().join("eval.csv");
    let o = ccodec(&["--checkpoint-dir", s(&ck), "eval", s(&corpus), "--csv", s(&csv)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let mut r = csv::Reader::from_path(&csv).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["path", "bpp", "psnr", "ssim"]);
    let rows: Vec<Vec<String>> = r.records().map(|x| x.unwrap().iter().map(String::from).collect()).collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[3][0], "mean");
    for col in 1..4 {
        let vals: Vec<f64> = rows[..3].iter().map(|r| r[col].parse().unwrap()).collect();
        let mean: f64 = rows[3][col].parse().unwrap();
        assert!((vals.iter().sum::<f64>() / 3.0 - mean).abs() < 1e-9);
    }

    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    assert_eq!(ccodec(&["--checkpoint-dir", s(&ck), "eval", s(&empty)]).status.code(), Some(2));
}

#[test]
fn gen_dataset_is_seeded() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for d in [&a, &b] {
        let o = ccodec(&["gen-dataset", s(d), "-n", "2", "--seed", "9"]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
    }
    for f in ["img_00001.png", "map_00001.png"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap());
    }
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let img = &toy_pngs(tmp.path(), 1)[0];
    let missing = tmp.path().join("nowhere");
    let o = ccodec(&["--checkpoint-dir", s(&missing), "compress", s(img), s(&tmp.path().join("x.ccb"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere"));

    assert_eq!(ccodec(&["frobnicate"]).status.code(), Some(2));

    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "stepz = 3\n").unwrap();
    let o = ccodec(&["--config", s(&cfg), "gen-dataset", s(tmp.path()), "-n", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("stepz"));

    let junk = tmp.path().join("junk.ccb");
    std::fs::write(&junk, b"not a stream").unwrap();
    assert_eq!(ccodec(&["inspect", s(&junk)]).status.code(), Some(1));
}
