//! Adam, the text-to-latent training loop and trained-model loading.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;

use crate::autodiff::Graph;
use crate::config::TrainConfig;
use crate::dataset::{holdout_split, Sample};
use crate::encoder::{Embedding, TextEncoder, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::generator::GeneratorParams;
use crate::io::Checkpoint;
use crate::perceptual::{FeatureExtractor, PerceptualTarget};
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::text2latent::{LatentCode, LatentSpace, MlpParams};

pub const CONFIG_KEY: &str = "meta/config";
pub const EPOCH_KEY: &str = "meta/epoch";
pub const HISTORY_KEY: &str = "meta/loss_history";

/// Adam with bias correction over a fixed list of tensors.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn from_config(cfg: &TrainConfig) -> Self {
        Self::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: Vec<&mut Arc<Tensor>>, grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid("adam", format!("{} parameters but {} gradients", params.len(), grads.len())));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.numel()]).collect();
            self.v = self.m.clone();
        }
        if self.m.len() != grads.len() {
            return Err(Error::invalid("adam", "parameter count changed between steps"));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let data = Arc::make_mut(p).data_mut();
            for i in 0..data.len() {
                let gi = g.data()[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                data[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// The frozen networks and the text encoder a configuration refers to.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub generator: GeneratorParams,
    pub extractor: FeatureExtractor,
    pub encoder: TextEncoder,
}

impl Pipeline {
    /// Seeded networks, with weights from the configured checkpoint files
    /// when given.
    pub fn from_config(cfg: &TrainConfig) -> Result<Self> {
        let mut p = Self::seeded(cfg)?;
        if let Some(path) = &cfg.generator_weights {
            if p.generator.import(&Checkpoint::load(path)?)? == 0 {
                return Err(Error::format(path, "no gen/ tensors"));
            }
        }
        if let Some(path) = &cfg.vgg_weights {
            if p.extractor.import(&Checkpoint::load(path)?)? == 0 {
                return Err(Error::format(path, "no vgg/ tensors"));
            }
        }
        Ok(p)
    }

    fn seeded(cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            generator: GeneratorParams::init(cfg.generator_seed, cfg.resolution)?,
            extractor: FeatureExtractor::init(cfg.vgg_seed, cfg.width_divisor)?,
            encoder: TextEncoder::new(cfg.encoder_seed),
        })
    }
}

/// Precomputed embeddings keyed by record id.
pub type EmbeddingTable = HashMap<String, Embedding>;

/// One embedding per sample: the table entry for its id, else the encoded caption.
pub fn embed_samples(encoder: &TextEncoder, samples: &[Sample], table: Option<&EmbeddingTable>) -> Result<Vec<Embedding>> {
    samples
        .iter()
        .map(|s| match table.and_then(|t| t.get(&s.id)) {
            Some(e) => Ok(e.clone()),
            None => encoder.encode(&s.caption),
        })
        .collect()
}

/// A text-to-latent network together with everything needed to run it.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub mlp: MlpParams,
    pub pipeline: Pipeline,
    pub epoch: usize,
    pub history: Vec<f64>,
}

impl Model {
    /// The freshly initialized network a training run with `cfg` starts from.
    pub fn untrained(cfg: &TrainConfig) -> Result<Self> {
        Ok(Self {
            config: cfg.clone(),
            mlp: MlpParams::init(cfg.seed, &cfg.hidden, cfg.space)?,
            pipeline: Pipeline::from_config(cfg)?,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn latent(&self, e: &Embedding) -> Result<LatentCode> {
        self.mlp.forward(e)
    }

    pub fn latent_for_caption(&self, caption: &str) -> Result<LatentCode> {
        self.latent(&self.pipeline.encoder.encode(caption)?)
    }

    pub fn generate(&self, e: &Embedding) -> Result<Tensor> {
        self.pipeline.generator.generate(&self.latent(e)?)
    }

    pub fn generate_caption(&self, caption: &str) -> Result<Tensor> {
        self.generate(&self.pipeline.encoder.encode(caption)?)
    }

    /// Network tensors and metadata; frozen networks are embedded when the
    /// configuration loaded them from files.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.mlp.write_to(&mut ck);
        ck.insert_text(CONFIG_KEY, &self.config.to_text());
        ck.insert(EPOCH_KEY, Tensor::scalar(self.epoch as f64));
        ck.insert(HISTORY_KEY, Tensor::vector(self.history.clone()));
        if self.config.generator_weights.is_some() {
            self.pipeline.generator.write_to(&mut ck);
        }
        if self.config.vgg_weights.is_some() {
            self.pipeline.extractor.write_to(&mut ck);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::parse(&ck.text(CONFIG_KEY)?)?;
        let mlp = MlpParams::read_from(ck, config.space)?;
        if mlp.hidden() != config.hidden {
            return Err(Error::format(
                "checkpoint",
                format!("hidden widths {:?} disagree with the stored config {:?}", mlp.hidden(), config.hidden),
            ));
        }
        let mut pipeline = Pipeline::seeded(&config)?;
        if pipeline.generator.import(ck)? == 0 {
            if let Some(path) = &config.generator_weights {
                pipeline.generator.import(&Checkpoint::load(path)?)?;
            }
        }
        if pipeline.extractor.import(ck)? == 0 {
            if let Some(path) = &config.vgg_weights {
                pipeline.extractor.import(&Checkpoint::load(path)?)?;
            }
        }
        let epoch = ck.require(EPOCH_KEY)?.item();
        let history = ck.require(HISTORY_KEY)?.data().to_vec();
        if !(epoch >= 0.0 && epoch.fract() == 0.0) || history.len() != epoch as usize {
            return Err(Error::format("checkpoint", "epoch counter and loss history disagree"));
        }
        Ok(Self {
            config,
            mlp,
            pipeline,
            epoch: epoch as usize,
            history,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }
}

/// `<checkpoint>.history.csv`
pub fn history_path(checkpoint: &Path) -> PathBuf {
    let mut s = checkpoint.as_os_str().to_owned();
    s.push(".history.csv");
    PathBuf::from(s)
}

pub fn write_history(path: impl AsRef<Path>, history: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,mean_loss\n");
    for (i, l) in history.iter().enumerate() {
        out.push_str(&format!("{},{l:?}\n", i + 1));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Where and how often a run persists itself.
#[derive(Debug, Clone, Default)]
pub struct TrainOutput {
    pub checkpoint: Option<PathBuf>,
}

impl TrainOutput {
    pub fn to(path: impl Into<PathBuf>) -> Self {
        Self {
            checkpoint: Some(path.into()),
        }
    }

    fn persist(&self, model: &Model) -> Result<()> {
        if let Some(path) = &self.checkpoint {
            model.save(path)?;
            write_history(history_path(path), &model.history)?;
        }
        Ok(())
    }
}

/// Trains on the leading part of `data` (the tail fraction `cfg.holdout` is
/// held out). Only the text-to-latent parameters change; `progress` sees
/// every epoch's mean loss.
pub fn train(
    cfg: &TrainConfig,
    data: &[Sample],
    embeddings: Option<&EmbeddingTable>,
    out: &TrainOutput,
    progress: &mut dyn FnMut(usize, f64),
) -> Result<Model> {
    let mut model = Model::untrained(cfg)?;
    let (train_set, _) = holdout_split(data, cfg.holdout);
    if train_set.is_empty() {
        return Err(Error::invalid("train", "no training samples"));
    }
    let res = cfg.resolution;
    for s in train_set {
        if s.image.shape() != [3, res, res] {
            return Err(Error::shape("train", s.image.shape(), &[3, res, res]));
        }
    }
    let pipe = model.pipeline.clone();
    let inputs = embed_samples(&pipe.encoder, train_set, embeddings)?;
    let targets = train_set
        .iter()
        .map(|s| pipe.extractor.target(&s.image, &cfg.layers))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::from_config(cfg);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut substream(cfg.seed, &format!("shuffle/{epoch}")));
        let mut total = 0.0;
        for (step, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_gradients(&model.mlp, &pipe, cfg, batch, &inputs, &targets)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, step: step + 1 });
            }
            adam.step(model.mlp.tensors_mut(), &grads)?;
            total += loss * batch.len() as f64;
        }
        let mean = total / train_set.len() as f64;
        model.history.push(mean);
        model.epoch = epoch;
        progress(epoch, mean);
        if epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs {
            out.persist(&model)?;
        }
    }
    Ok(model)
}

fn batch_gradients(
    mlp: &MlpParams,
    pipe: &Pipeline,
    cfg: &TrainConfig,
    batch: &[usize],
    inputs: &[Embedding],
    targets: &[PerceptualTarget],
) -> Result<(f64, Vec<Tensor>)> {
    let mut g = Graph::new();
    let x: Vec<f64> = batch.iter().flat_map(|&i| inputs[i].values().iter().copied()).collect();
    let x = g.constant(Tensor::new(vec![batch.len(), EMBEDDING_DIM], x)?);
    let (latent, params) = mlp.forward_graph(&mut g, x)?;
    let w = match cfg.space {
        LatentSpace::Z => pipe.generator.mapping_graph(&mut g, latent)?,
        LatentSpace::W => latent,
    };
    let images = pipe.generator.synthesis_graph(&mut g, w)?;
    let mut total = None;
    for (img, &i) in images.into_iter().zip(batch) {
        let l = pipe.extractor.loss_graph(&mut g, img, &targets[i], &cfg.layers)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let mut loss = g.scale(total.expect("non-empty batch"), 1.0 / batch.len() as f64);
    if cfg.latent_penalty > 0.0 {
        let sq = g.square(latent);
        let m = g.mean(sq);
        let p = g.scale(m, cfg.latent_penalty);
        loss = g.add(loss, p)?;
    }
    g.backward(loss)?;
    let value = g.value(loss).item();
    let grads = params
        .iter()
        .map(|&p| g.grad(p).cloned().unwrap_or_else(|| Tensor::zeros(g.shape(p))))
        .collect();
    Ok((value, grads))
}
