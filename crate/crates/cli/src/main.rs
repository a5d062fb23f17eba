use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use t2f_core::caption::{flip_attribute, parse_caption, render_caption, AttributeVector};
use t2f_core::config::TrainConfig;
use t2f_core::dataset::{holdout_split, load_dataset, synthesize_dataset};
use t2f_core::encoder::load_embeddings;
use t2f_core::error::ErrorClass;
use t2f_core::evaluate::{evaluate, run_experiment_matrix, self_evaluate};
use t2f_core::generator::GeneratorParams;
use t2f_core::io::{image_to_bytes, read_vectors, write_image, RgbImage, VectorTable};
use t2f_core::metrics::{fid, fsd, fss, FsdNorm, MetricLine};
use t2f_core::rng::seeded;
use t2f_core::train::{train, EmbeddingTable, Model, TrainOutput};
use t2f_core::{Error, Result};

/// Caption to face: train, generate, manipulate and evaluate.
#[derive(Parser)]
#[command(name = "t2f", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a text-to-latent network on a caption/image manifest.
    Train(TrainArgs),
    /// Synthesize the face for one caption.
    Generate(GenerateArgs),
    /// Render a caption next to variants with attributes flipped.
    Manipulate(ManipulateArgs),
    /// Score a checkpoint with FSD, FSS and FID.
    Evaluate(EvaluateArgs),
    /// Caption grammar utilities.
    #[command(subcommand)]
    Caption(CaptionCommand),
    /// Dataset utilities.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Train and score experiments 01 to 06.
    Experiments(ExperimentsArgs),
    /// Metrics over feature files.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// key=value configuration; defaults to experiment 05.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Precomputed 768-d embeddings keyed by record id.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured epoch count.
    #[arg(long)]
    epochs: Option<usize>,
    /// Suppress per-epoch loss lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    caption: String,
    /// Output image; `.png` writes PNG, anything else PPM.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ManipulateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    caption: String,
    /// ATTR=true|false; repeat for one panel per flip.
    #[arg(long = "flip", required = true)]
    flips: Vec<String>,
    #[arg(long)]
    out_grid: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Score every record instead of the held-out tail.
    #[arg(long)]
    all: bool,
    /// Score the real images against themselves.
    #[arg(long = "self")]
    self_eval: bool,
}

#[derive(Subcommand)]
enum CaptionCommand {
    /// Print the attributes a caption sets, one per line.
    Parse {
        text: String,
    },
    /// Print the caption for a list of attributes, or for a random valid
    /// vector drawn from `--seed`.
    Render {
        /// Comma-separated attribute names.
        #[arg(long, conflicts_with = "seed")]
        attrs: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Subcommand)]
enum DatasetCommand {
    /// Write an oracle dataset: images, manifest.tsv and latents.tsv.
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        resolution: usize,
        #[arg(long, default_value_t = t2f_core::config::DEFAULT_GENERATOR_SEED)]
        generator_seed: u64,
    },
}

#[derive(Args)]
struct ExperimentsArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Base hyperparameters; the experiment key is ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricKind {
    Fid,
    Fsd,
    Fss,
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    L2,
    MeanAbs,
}

#[derive(Args)]
struct MetricsArgs {
    metric: MetricKind,
    #[arg(long)]
    features_a: PathBuf,
    #[arg(long)]
    features_b: PathBuf,
    /// Distance used by fsd.
    #[arg(long, value_enum, default_value = "l2")]
    norm: NormArg,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, kind) = match e.class() {
                ErrorClass::Data => (2, "data"),
                ErrorClass::Numeric => (3, "numeric"),
            };
            eprintln!("error[{kind}]: {}", e.to_string().replace('\n', " "));
            ExitCode::from(code)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => {
            let model = Model::load(&a.ckpt)?;
            write_image(&a.out, &image_to_bytes(&model.generate_caption(&a.caption)?)?)
        }
        Command::Manipulate(a) => cmd_manipulate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Caption(c) => cmd_caption(c),
        Command::Dataset(DatasetCommand::Synth {
            n,
            seed,
            out,
            resolution,
            generator_seed,
        }) => {
            let gen = GeneratorParams::init(generator_seed, resolution)?;
            let manifest = synthesize_dataset(n, seed, &gen, &out)?;
            println!("{}", manifest.display());
            Ok(())
        }
        Command::Experiments(a) => cmd_experiments(a),
        Command::Metrics(a) => cmd_metrics(a),
    }
}

fn base_config(path: Option<&Path>, seed: Option<u64>, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(e) = epochs {
        cfg.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn embeddings(path: Option<&Path>) -> Result<Option<EmbeddingTable>> {
    path.map(|p| Ok(load_embeddings(p)?.into_iter().collect::<HashMap<_, _>>()))
        .transpose()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = base_config(a.config.as_deref(), a.seed, a.epochs)?;
    let data = load_dataset(&a.data, cfg.resolution)?;
    let table = embeddings(a.embeddings.as_deref())?;
    let quiet = a.quiet;
    train(&cfg, &data, table.as_ref(), &TrainOutput::to(&a.out), &mut |e, l| {
        if !quiet {
            println!("epoch={e} loss={l:?}");
        }
    })?;
    Ok(())
}

fn parse_flip(arg: &str) -> Result<(&str, bool)> {
    let bad = || Error::Config(format!("--flip expects ATTR=true|false, got {arg:?}"));
    let (name, value) = arg.split_once('=').ok_or_else(bad)?;
    let value = value.trim().parse::<bool>().map_err(|_| bad())?;
    Ok((name.trim(), value))
}

const SEPARATOR: usize = 2;

/// Single row of equally sized panels separated by white columns.
fn grid(panels: &[RgbImage]) -> RgbImage {
    let (w, h) = (panels[0].width, panels[0].height);
    let width = panels.len() * w + (panels.len() - 1) * SEPARATOR;
    let mut pixels = vec![255u8; width * h * 3];
    for (k, p) in panels.iter().enumerate() {
        let x0 = k * (w + SEPARATOR);
        for y in 0..h {
            let src = &p.pixels[y * w * 3..(y + 1) * w * 3];
            let dst = (y * width + x0) * 3;
            pixels[dst..dst + w * 3].copy_from_slice(src);
        }
    }
    RgbImage { width, height: h, pixels }
}

fn cmd_manipulate(a: ManipulateArgs) -> Result<()> {
    let model = Model::load(&a.ckpt)?;
    let attrs = parse_caption(&a.caption)?.attrs;
    let mut captions = vec![render_caption(&attrs)?.text().to_string()];
    for arg in &a.flips {
        let (name, value) = parse_flip(arg)?;
        captions.push(render_caption(&flip_attribute(attrs, name, value)?)?.text().to_string());
    }
    let panels = captions
        .iter()
        .map(|c| image_to_bytes(&model.generate_caption(c)?))
        .collect::<Result<Vec<_>>>()?;
    write_image(&a.out_grid, &grid(&panels))?;
    for c in &captions {
        println!("{c}");
    }
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let model = Model::load(&a.ckpt)?;
    let data = load_dataset(&a.data, model.config.resolution)?;
    let samples = if a.all { &data[..] } else { holdout_split(&data, model.config.holdout).1 };
    if samples.len() < 2 {
        return Err(Error::invalid("evaluate", "at least 2 samples are needed; try --all"));
    }
    let report = if a.self_eval {
        self_evaluate(&model.config, &model.pipeline.extractor, samples)?
    } else {
        let table = embeddings(a.embeddings.as_deref())?;
        evaluate(&model, samples, table.as_ref())?
    };
    let text = report.to_text();
    std::fs::write(&a.report, &text).map_err(|e| Error::io(&a.report, e))?;
    print!("{text}");
    Ok(())
}

fn cmd_caption(c: CaptionCommand) -> Result<()> {
    match c {
        CaptionCommand::Parse { text } => {
            let parsed = parse_caption(&text)?;
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            for name in parsed.attrs.names() {
                println!("{name}");
            }
        }
        CaptionCommand::Render { attrs, seed } => {
            let v = match (attrs, seed) {
                (Some(list), _) => {
                    let v = AttributeVector::from_names(list.split(',').map(str::trim).filter(|s| !s.is_empty()))?;
                    v.validate()?;
                    v
                }
                (None, Some(s)) => AttributeVector::random(&mut seeded(s)),
                (None, None) => return Err(Error::Config("caption render needs --attrs or --seed".into())),
            };
            println!("{}", render_caption(&v)?.text());
        }
    }
    Ok(())
}

fn cmd_experiments(a: ExperimentsArgs) -> Result<()> {
    let cfg = base_config(a.config.as_deref(), a.seed, a.epochs)?;
    let data = load_dataset(&a.data, cfg.resolution)?;
    let table = embeddings(a.embeddings.as_deref())?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let quiet = a.quiet;
    let report = run_experiment_matrix(&cfg, &data, table.as_ref(), Some(&a.out), &mut |id, e, l| {
        if !quiet {
            println!("experiment={id:02} epoch={e} loss={l:?}");
        }
    })?;
    let path = a.out.join("experiments.tsv");
    let tsv = report.to_tsv();
    std::fs::write(&path, &tsv).map_err(|e| Error::io(&path, e))?;
    print!("{tsv}");
    Ok(())
}

fn paired<'a>(a: &'a VectorTable, b: &'a VectorTable) -> Result<Vec<(&'a [f64], &'a [f64])>> {
    a.iter()
        .map(|(id, va)| {
            let vb = b
                .get(id)
                .ok_or_else(|| Error::invalid("metrics", format!("id {id:?} missing from --features-b")))?;
            Ok((va, vb))
        })
        .collect()
}

fn cmd_metrics(a: MetricsArgs) -> Result<()> {
    let fa = read_vectors(&a.features_a, None)?;
    let fb = read_vectors(&a.features_b, None)?;
    if fa.dim() != fb.dim() {
        return Err(Error::invalid(
            "metrics",
            format!("feature dimensions differ: {:?} vs {:?}", fa.dim(), fb.dim()),
        ));
    }
    let d = fa.dim().unwrap_or(0);
    let line = match a.metric {
        MetricKind::Fid => {
            let sa: Vec<&[f64]> = fa.iter().map(|(_, v)| v).collect();
            let sb: Vec<&[f64]> = fb.iter().map(|(_, v)| v).collect();
            MetricLine {
                name: "fid",
                value: fid(&sa, &sb)?,
                n: sa.len().min(sb.len()),
                d,
            }
        }
        MetricKind::Fsd | MetricKind::Fss => {
            if fa.len() != fb.len() {
                return Err(Error::invalid("metrics", "paired metrics need the same ids in both files"));
            }
            let pairs = paired(&fa, &fb)?;
            let (name, value) = match a.metric {
                MetricKind::Fsd => {
                    let norm = match a.norm {
                        NormArg::L2 => FsdNorm::L2,
                        NormArg::MeanAbs => FsdNorm::MeanAbs,
                    };
                    ("fsd", fsd(&pairs, norm)?)
                }
                _ => ("fss", fss(&pairs)?),
            };
            MetricLine {
                name,
                value,
                n: pairs.len(),
                d,
            }
        }
    };
    println!("{line}");
    Ok(())
}
