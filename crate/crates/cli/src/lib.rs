//! Command implementations behind the `ccodec` binary.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::Command as Process;

use ccodec::bitstream::{
    compress, decode_layers, decompress, replace_structure, swap_texture, CodecSettings, ConceptualBitstream, Models,
};
use ccodec::imagecore::{psnr, Image, StructuralMap};
use ccodec::training::{gen_dataset, load_images, ssim_metric, train, Config};
use ccodec::{CodecError, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "ccodec", version, about = "Structure/texture conceptual image codec")]
pub struct Cli {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding `edgesr.ckpt` and `hfgan.ckpt`.
    #[arg(long, global = true, default_value = "checkpoints")]
    pub checkpoint_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Encode a PNG into a `.ccb` stream.
    Compress {
        input: PathBuf,
        output: PathBuf,
        /// Print only the bit rate.
        #[arg(long)]
        print_bpp: bool,
    },
    /// Decode a `.ccb` stream into a PNG.
    Decompress { input: PathBuf, output: PathBuf },
    /// Train all networks on `dataset_dir`; checkpoints go to the checkpoint dir.
    Train,
    /// Write a procedural toy corpus of image and edge-map PNG pairs.
    GenDataset {
        out_dir: PathBuf,
        #[arg(short, long, default_value_t = 500)]
        n: usize,
    },
    /// Edit a stream in the compressed domain.
    Manipulate {
        #[arg(value_enum)]
        mode: Mode,
        /// Stream to edit.
        input: PathBuf,
        /// Texture donor stream (swap-texture) or edge-map PNG (edit-structure).
        source: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Also write the decoded result.
        #[arg(long)]
        decode: Option<PathBuf>,
    },
    /// Per-image and mean bpp, PSNR and SSIM over a PNG corpus.
    Eval {
        corpus: PathBuf,
        /// CSV destination; stdout when absent.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// External program called as `<scorer> <original.png> <decoded.png>`
        /// that prints one number.
        #[arg(long)]
        scorer: Option<PathBuf>,
    },
    /// Print header fields and payload sizes of a stream.
    Inspect {
        input: PathBuf,
        #[arg(long)]
        print_bpp: bool,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    SwapTexture,
    EditStructure,
}

fn read_stream(path: &Path) -> Result<ConceptualBitstream> {
    let bytes = std::fs::read(path).map_err(|e| CodecError::io(path, e))?;
    ConceptualBitstream::from_bytes(&bytes)
}

fn write_stream(path: &Path, bs: &ConceptualBitstream) -> Result<()> {
    std::fs::write(path, bs.to_bytes()).map_err(|e| CodecError::io(path, e))
}

/// One row of an evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub path: PathBuf,
    pub bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub external: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// Arithmetic means of `(bpp, psnr, ssim)`.
    pub fn means(&self) -> (f64, f64, f64) {
        let n = self.rows.len() as f64;
        let sum = |f: fn(&EvalRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n;
        (sum(|r| r.bpp), sum(|r| r.psnr), sum(|r| r.ssim))
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> std::result::Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let external = self.rows.iter().any(|r| r.external.is_some());
        let mut header = vec!["path", "bpp", "psnr", "ssim"];
        if external {
            header.push("external");
        }
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.path.display().to_string(), r.bpp.to_string(), r.psnr.to_string(), r.ssim.to_string()];
            if external {
                rec.push(r.external.map(|v| v.to_string()).unwrap_or_default());
            }
            out.write_record(&rec)?;
        }
        let (b, p, s) = self.means();
        let mut mean = vec!["mean".to_string(), b.to_string(), p.to_string(), s.to_string()];
        if external {
            let ext: Vec<f64> = self.rows.iter().filter_map(|r| r.external).collect();
            mean.push((ext.iter().sum::<f64>() / ext.len() as f64).to_string());
        }
        out.write_record(&mean)?;
        out.flush()?;
        Ok(())
    }
}

fn external_score(scorer: &Path, original: &Path, decoded: &Path) -> Result<f64> {
    let out = Process::new(scorer)
        .arg(original)
        .arg(decoded)
        .output()
        .map_err(|e| CodecError::io(scorer, e))?;
    if !out.status.success() {
        return Err(CodecError::Format(format!("scorer {} exited with {}", scorer.display(), out.status)));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    text.trim()
        .parse()
        .map_err(|_| CodecError::Format(format!("scorer printed {:?}, expected a number", text.trim())))
}

/// Compresses and decompresses every image of `corpus`.
pub fn evaluate(corpus: &Path, models: &Models, settings: &CodecSettings, scorer: Option<&Path>) -> Result<EvalReport> {
    let images = load_images(corpus)?;
    if images.is_empty() {
        return Err(CodecError::Config(format!("no PNG images in {}", corpus.display())));
    }
    let tmp = std::env::temp_dir().join(format!("ccodec-eval-{}", std::process::id()));
    let mut rows = Vec::with_capacity(images.len());
    for (path, img) in images {
        let bs = compress(&img, models, settings)?;
        let out = decompress(&bs, models, settings)?;
        let external = match scorer {
            Some(exe) => {
                std::fs::create_dir_all(&tmp).map_err(|e| CodecError::io(&tmp, e))?;
                let dec = tmp.join("decoded.png");
                out.save(&dec)?;
                Some(external_score(exe, &path, &dec)?)
            }
            None => None,
        };
        rows.push(EvalRow { bpp: bs.bpp(), psnr: psnr(&img, &out)?, ssim: ssim_metric(&img, &out)?, external, path });
    }
    let _ = std::fs::remove_dir_all(&tmp);
    Ok(EvalReport { rows })
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        c.train.seed = s;
    }
    Ok(c)
}

/// Runs one parsed command, writing user-facing output to `out`.
pub fn execute(cli: &Cli, out: &mut dyn std::io::Write) -> Result<()> {
    let config = load_config(cli)?;
    let settings = config.codec;
    let ckpt = &cli.checkpoint_dir;
    let io_err = |e: std::io::Error| CodecError::io("<stdout>", e);
    match &cli.command {
        Command::Compress { input, output, print_bpp } => {
            let models = Models::load(ckpt)?;
            let img = Image::load(input)?;
            let bs = compress(&img, &models, &settings)?;
            write_stream(output, &bs)?;
            if *print_bpp {
                writeln!(out, "{}", bs.bpp()).map_err(io_err)?;
            } else {
                writeln!(out, "{} bytes, {:.6} bpp", bs.byte_len(), bs.bpp()).map_err(io_err)?;
            }
        }
        Command::Decompress { input, output } => {
            let models = Models::load(ckpt)?;
            let bs = read_stream(input)?;
            decompress(&bs, &models, &settings)?.save(output)?;
            writeln!(out, "{}x{} written to {}", bs.width, bs.height, output.display()).map_err(io_err)?;
        }
        Command::Train => {
            let report = train(&config, ckpt)?;
            if let (Some(first), Some(last)) = (report.evals.first(), report.evals.last()) {
                writeln!(out, "validation L1 {:.5} -> {:.5}", first.1, last.1).map_err(io_err)?;
            }
            writeln!(out, "checkpoints in {}", ckpt.display()).map_err(io_err)?;
        }
        Command::GenDataset { out_dir, n } => {
            let files = gen_dataset(out_dir, *n, cli.seed.unwrap_or(config.train.seed))?;
            writeln!(out, "{} files written to {}", files.len(), out_dir.display()).map_err(io_err)?;
        }
        Command::Manipulate { mode, input, source, output, decode } => {
            let bs = read_stream(input)?;
            let edited = match mode {
                Mode::SwapTexture => swap_texture(&bs, &read_stream(source)?)?,
                Mode::EditStructure => replace_structure(&bs, &StructuralMap::load(source)?, &settings)?,
            };
            write_stream(output, &edited)?;
            if let Some(png) = decode {
                decompress(&edited, &Models::load(ckpt)?, &settings)?.save(png)?;
            }
            writeln!(out, "{} bytes written to {}", edited.byte_len(), output.display()).map_err(io_err)?;
        }
        Command::Eval { corpus, csv: csv_path, scorer } => {
            let models = Models::load(ckpt)?;
            let report = evaluate(corpus, &models, &settings, scorer.as_deref())?;
            let csv_err = |e: csv::Error| CodecError::Format(format!("csv: {e}"));
            match csv_path {
                Some(p) => {
                    let f = std::fs::File::create(p).map_err(|e| CodecError::io(p, e))?;
                    report.write_csv(f).map_err(csv_err)?;
                    let (b, ps, s) = report.means();
                    writeln!(out, "{} images: bpp {b:.5} psnr {ps:.3} ssim {s:.5}", report.rows.len())
                        .map_err(io_err)?;
                }
                None => report.write_csv(&mut *out).map_err(csv_err)?,
            }
        }
        Command::Inspect { input, print_bpp } => {
            let bs = read_stream(input)?;
            if *print_bpp {
                writeln!(out, "{}", bs.bpp()).map_err(io_err)?;
            } else {
                let (low, tex) = decode_layers(&bs)?;
                writeln!(
                    out,
                    "version {}\nsize {}x{}\nflags {:#04x}\nstructure {} bytes ({}x{} at scale {}, {} edge pixels)\n\
                     texture {} bytes (d={}, qp={}, {} bits)\ntotal {} bytes, {:.6} bpp",
                    bs.version,
                    bs.width,
                    bs.height,
                    bs.flags,
                    bs.structure.byte_len(),
                    low.width(),
                    low.height(),
                    bs.structure.scale,
                    low.count_ones(),
                    bs.texture.byte_len(),
                    tex.q.len(),
                    tex.qp,
                    bs.texture.bit_len,
                    bs.byte_len(),
                    bs.bpp()
                )
                .map_err(io_err)?;
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 success, 1 runtime failure, 2 usage or configuration error.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match execute(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                2
            } else {
                1
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn report_means_are_row_means() {
        let row = |b, p, s| EvalRow { path: PathBuf::from("x.png"), bpp: b, psnr: p, ssim: s, external: None };
        let r = EvalReport { rows: vec![row(0.1, 20.0, 0.5), row(0.3, 30.0, 0.7), row(0.2, 99.0, 1.0)] };
        let (b, p, s) = r.means();
        assert!((b - 0.2).abs() < 1e-12);
        assert!((p - 149.0 / 3.0).abs() < 1e-12);
        assert!((s - 2.2 / 3.0).abs() < 1e-12);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.starts_with("path,bpp,psnr,ssim\n"));
    }

    #[test]
    fn parses_global_flags_after_subcommand() {
        let cli = Cli::try_parse_from(["ccodec", "gen-dataset", "out", "-n", "3", "--seed", "7"]).unwrap();
        assert_eq!(cli.seed, Some(7));
        assert!(matches!(cli.command, Command::GenDataset { n: 3, .. }));
        assert!(Cli::try_parse_from(["ccodec", "manipulate", "bogus", "a", "b", "-o", "c"]).is_err());
    }
}
