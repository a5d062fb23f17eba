//! Evaluation reports and the six-experiment matrix.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::TrainConfig;
use crate::dataset::{holdout_split, Sample};
use crate::error::{Error, Result};
use crate::metrics::{face_features, fid, fsd, fss, FsdNorm};
use crate::perceptual::FeatureExtractor;
use crate::text2latent::LatentSpace;
use crate::train::{embed_samples, train, EmbeddingTable, Model, TrainOutput};

pub const EXPERIMENT_IDS: [u32; 6] = [1, 2, 3, 4, 5, 6];

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub experiment: Option<u32>,
    pub space: LatentSpace,
    pub layers: Vec<&'static str>,
    pub hypercolumn: bool,
    pub n: usize,
    pub d: usize,
    pub fsd: f64,
    /// Mean cosine similarity as a fraction; 1.0 is 100%.
    pub fss: f64,
    pub fid: f64,
}

fn experiment_label(e: Option<u32>) -> String {
    e.map_or_else(|| "none".to_string(), |e| format!("{e:02}"))
}

impl EvalReport {
    /// Stable `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("writing to a String");
        kv("experiment", experiment_label(self.experiment));
        kv("space", self.space.to_string());
        kv("layers", self.layers.join(","));
        kv("hypercolumn", self.hypercolumn.to_string());
        kv("n", self.n.to_string());
        kv("d", self.d.to_string());
        kv("fsd", format!("{:?}", self.fsd));
        kv("fss", format!("{:?}", self.fss));
        kv("fss_percent", format!("{:.4}", 100.0 * self.fss));
        kv("fid", format!("{:?}", self.fid));
        s
    }
}

/// Face features of every image, in order.
pub fn feature_set<'a>(fe: &FeatureExtractor, images: impl IntoIterator<Item = &'a crate::tensor::Tensor>) -> Result<Vec<Vec<f64>>> {
    images.into_iter().map(|img| face_features(fe, img)).collect()
}

/// FSD, FSS and FID between paired generated and real feature sets.
pub fn score(generated: &[Vec<f64>], real: &[Vec<f64>]) -> Result<(f64, f64, f64)> {
    if generated.len() != real.len() || generated.is_empty() {
        return Err(Error::invalid(
            "evaluate",
            format!("{} generated but {} real feature vectors", generated.len(), real.len()),
        ));
    }
    let pairs: Vec<(&[f64], &[f64])> = generated.iter().zip(real).map(|(g, r)| (g.as_slice(), r.as_slice())).collect();
    Ok((fsd(&pairs, FsdNorm::L2)?, fss(&pairs)?, fid(generated, real)?))
}

fn report(cfg: &TrainConfig, generated: &[Vec<f64>], real: &[Vec<f64>]) -> Result<EvalReport> {
    let (fsd, fss, fid) = score(generated, real)?;
    Ok(EvalReport {
        experiment: cfg.experiment,
        space: cfg.space,
        layers: cfg.layers.names(),
        hypercolumn: cfg.layers.hypercolumn(),
        n: real.len(),
        d: real[0].len(),
        fsd,
        fss,
        fid,
    })
}

/// Generates one image per sample caption and compares it with the sample image.
pub fn evaluate(model: &Model, samples: &[Sample], embeddings: Option<&EmbeddingTable>) -> Result<EvalReport> {
    let real = feature_set(&model.pipeline.extractor, samples.iter().map(|s| &s.image))?;
    evaluate_against(model, samples, embeddings, &real)
}

/// As [`evaluate`], with the real images' features already computed.
pub fn evaluate_against(
    model: &Model,
    samples: &[Sample],
    embeddings: Option<&EmbeddingTable>,
    real: &[Vec<f64>],
) -> Result<EvalReport> {
    let res = model.config.resolution;
    if let Some(s) = samples.iter().find(|s| s.image.shape() != [3, res, res]) {
        return Err(Error::shape("evaluate", s.image.shape(), &[3, res, res]));
    }
    let inputs = embed_samples(&model.pipeline.encoder, samples, embeddings)?;
    let images = inputs.iter().map(|e| model.generate(e)).collect::<Result<Vec<_>>>()?;
    let generated = feature_set(&model.pipeline.extractor, &images)?;
    report(&model.config, &generated, real)
}

/// The real set scored against itself.
pub fn self_evaluate(cfg: &TrainConfig, fe: &FeatureExtractor, samples: &[Sample]) -> Result<EvalReport> {
    let real = feature_set(fe, samples.iter().map(|s| &s.image))?;
    report(cfg, &real, &real)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixRow {
    pub experiment: u32,
    pub space: LatentSpace,
    pub layers: Vec<&'static str>,
    pub hypercolumn: bool,
    pub final_loss: f64,
    pub fsd: f64,
    pub fss: f64,
    pub fid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixReport {
    pub rows: Vec<MatrixRow>,
    pub holdout: usize,
}

impl MatrixReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("experiment\tspace\tlayers\tfinal_loss\tfsd\tfss\tfid\n");
        for r in &self.rows {
            let layers = if r.hypercolumn {
                format!("hypercolumn({})", r.layers.join(","))
            } else {
                r.layers.join(",")
            };
            writeln!(
                s,
                "{:02}\t{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}",
                r.experiment, r.space, layers, r.final_loss, r.fsd, r.fss, r.fid
            )
            .expect("writing to a String");
        }
        s
    }
}

/// Trains experiments 1 to 6 with `base`'s hyperparameters and seed and
/// scores each on the held-out tail. Checkpoints go to `out_dir/expNN.t2f`
/// when a directory is given.
pub fn run_experiment_matrix(
    base: &TrainConfig,
    data: &[Sample],
    embeddings: Option<&EmbeddingTable>,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(u32, usize, f64),
) -> Result<MatrixReport> {
    base.validate()?;
    let (_, held) = holdout_split(data, base.holdout);
    if held.len() < 2 {
        return Err(Error::invalid("experiments", "the held-out split needs at least 2 samples"));
    }
    let mut rows = Vec::with_capacity(EXPERIMENT_IDS.len());
    let mut real: Option<Vec<Vec<f64>>> = None;
    for id in EXPERIMENT_IDS {
        let cfg = base.with_experiment(id)?;
        let out = match out_dir {
            Some(d) => TrainOutput::to(d.join(format!("exp{id:02}.t2f"))),
            None => TrainOutput::default(),
        };
        let model = train(&cfg, data, embeddings, &out, &mut |e, l| progress(id, e, l))?;
        let real = match &real {
            Some(r) => r,
            None => real.insert(feature_set(&model.pipeline.extractor, held.iter().map(|s| &s.image))?),
        };
        let r = evaluate_against(&model, held, embeddings, real)?;
        rows.push(MatrixRow {
            experiment: id,
            space: cfg.space,
            layers: r.layers,
            hypercolumn: r.hypercolumn,
            final_loss: *model.history.last().expect("at least one epoch"),
            fsd: r.fsd,
            fss: r.fss,
            fid: r.fid,
        });
    }
    Ok(MatrixReport { rows, holdout: held.len() })
}
