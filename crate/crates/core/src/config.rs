//! Training configuration and its flat `key=value` file format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::generator::SUPPORTED_RESOLUTIONS;
use crate::perceptual::{experiment_layerset, LayerSet, DEFAULT_WIDTH_DIVISOR};
use crate::text2latent::{LatentSpace, DEFAULT_HIDDEN};

pub const DEFAULT_GENERATOR_SEED: u64 = 7;
pub const DEFAULT_VGG_SEED: u64 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Experiment id 1..=6, or `None` for an explicit space and layer set.
    pub experiment: Option<u32>,
    pub space: LatentSpace,
    pub layers: LayerSet,
    pub epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub resolution: usize,
    pub hidden: Vec<usize>,
    pub checkpoint_every: usize,
    pub generator_seed: u64,
    pub vgg_seed: u64,
    pub width_divisor: usize,
    pub encoder_seed: u64,
    /// Weight of `mean(latent^2)` added to the loss; off by default.
    pub latent_penalty: f64,
    /// Fraction of the manifest, taken from the end, held out for evaluation.
    pub holdout: f64,
    /// Checkpoint containers whose `gen/` or `vgg/` tensors replace the
    /// seeded frozen networks.
    pub generator_weights: Option<PathBuf>,
    pub vgg_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::experiment(5).expect("experiment 5 exists")
    }
}

const KEYS: [&str; 22] = [
    "experiment",
    "space",
    "layers",
    "hypercolumn",
    "epochs",
    "lr",
    "beta1",
    "beta2",
    "adam_eps",
    "batch_size",
    "seed",
    "resolution",
    "hidden",
    "checkpoint_every",
    "generator_seed",
    "vgg_seed",
    "width_divisor",
    "encoder_seed",
    "latent_penalty",
    "holdout",
    "generator_weights",
    "vgg_weights",
];

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl TrainConfig {
    pub fn experiment(id: u32) -> Result<Self> {
        let (space, layers) = experiment_layerset(id)?;
        Ok(Self {
            experiment: Some(id),
            space,
            layers,
            epochs: 500,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 16,
            seed: 0,
            resolution: 16,
            hidden: DEFAULT_HIDDEN.to_vec(),
            checkpoint_every: 50,
            generator_seed: DEFAULT_GENERATOR_SEED,
            vgg_seed: DEFAULT_VGG_SEED,
            width_divisor: DEFAULT_WIDTH_DIVISOR,
            encoder_seed: crate::encoder::DEFAULT_ENCODER_SEED,
            latent_penalty: 0.0,
            holdout: 0.2,
            generator_weights: None,
            vgg_weights: None,
        })
    }

    /// Same hyperparameters with another experiment's space and layers.
    pub fn with_experiment(&self, id: u32) -> Result<Self> {
        let (space, layers) = experiment_layerset(id)?;
        Ok(Self {
            experiment: Some(id),
            space,
            layers,
            ..self.clone()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("lr must be finite and non-negative, got {}", self.lr));
        }
        for (k, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{k} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0 && self.adam_eps.is_finite()) {
            return bad(format!("adam_eps must be positive, got {}", self.adam_eps));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return bad("batch_size and checkpoint_every must be positive".into());
        }
        if !SUPPORTED_RESOLUTIONS.contains(&self.resolution) {
            return bad(format!("resolution must be one of {SUPPORTED_RESOLUTIONS:?}, got {}", self.resolution));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden must list at least one positive width".into());
        }
        if !(self.latent_penalty >= 0.0 && self.latent_penalty.is_finite()) {
            return bad("latent_penalty must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout must lie in [0, 1), got {}", self.holdout));
        }
        if self.width_divisor == 0 || 64 % self.width_divisor != 0 {
            return bad(format!("width_divisor must divide 64, got {}", self.width_divisor));
        }
        Ok(())
    }

    /// Parses `key=value` lines; `#` starts a comment line. `experiment`
    /// presets space and layers, which explicit keys then override.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!("unknown key {k:?}; valid keys: {}", KEYS.join(", "))));
            }
            if entries.insert(k, v).is_some() {
                return Err(Error::Config(format!("key {k:?} given twice")));
            }
        }
        let experiment = match entries.get("experiment") {
            Some(&v) if v != "none" => Some(parse_num::<u32>("experiment", v)?),
            _ => None,
        };
        let mut cfg = Self::experiment(experiment.unwrap_or(5))?;
        cfg.experiment = experiment;
        if experiment.is_none() && !(entries.contains_key("space") && entries.contains_key("layers")) {
            return Err(Error::Config("without an experiment id, both space and layers are required".into()));
        }
        let hyper = match entries.get("hypercolumn") {
            Some(&v) => parse_num::<bool>("hypercolumn", v)?,
            None => cfg.layers.hypercolumn(),
        };
        cfg.layers = match entries.get("layers") {
            Some(&v) => LayerSet::parse(v, hyper)?,
            None => LayerSet::new(&cfg.layers.names(), hyper)?,
        };
        for (&k, &v) in &entries {
            match k {
                "space" => cfg.space = v.parse()?,
                "epochs" => cfg.epochs = parse_num(k, v)?,
                "lr" => cfg.lr = parse_num(k, v)?,
                "beta1" => cfg.beta1 = parse_num(k, v)?,
                "beta2" => cfg.beta2 = parse_num(k, v)?,
                "adam_eps" => cfg.adam_eps = parse_num(k, v)?,
                "batch_size" => cfg.batch_size = parse_num(k, v)?,
                "seed" => cfg.seed = parse_num(k, v)?,
                "resolution" => cfg.resolution = parse_num(k, v)?,
                "hidden" => {
                    cfg.hidden = v
                        .split([',', ' '])
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_num(k, s))
                        .collect::<Result<_>>()?
                }
                "checkpoint_every" => cfg.checkpoint_every = parse_num(k, v)?,
                "generator_seed" => cfg.generator_seed = parse_num(k, v)?,
                "vgg_seed" => cfg.vgg_seed = parse_num(k, v)?,
                "width_divisor" => cfg.width_divisor = parse_num(k, v)?,
                "encoder_seed" => cfg.encoder_seed = parse_num(k, v)?,
                "latent_penalty" => cfg.latent_penalty = parse_num(k, v)?,
                "holdout" => cfg.holdout = parse_num(k, v)?,
                "generator_weights" => cfg.generator_weights = Some(PathBuf::from(v)),
                "vgg_weights" => cfg.vgg_weights = Some(PathBuf::from(v)),
                _ => {}
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Every key in a fixed order; `parse(to_text())` gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").expect("writing to a String");
        kv("experiment", self.experiment.map_or("none".into(), |e| e.to_string()));
        kv("space", self.space.to_string());
        kv("layers", self.layers.names().join(","));
        kv("hypercolumn", self.layers.hypercolumn().to_string());
        kv("epochs", self.epochs.to_string());
        kv("lr", format!("{:?}", self.lr));
        kv("beta1", format!("{:?}", self.beta1));
        kv("beta2", format!("{:?}", self.beta2));
        kv("adam_eps", format!("{:?}", self.adam_eps));
        kv("batch_size", self.batch_size.to_string());
        kv("seed", self.seed.to_string());
        kv("resolution", self.resolution.to_string());
        kv("hidden", self.hidden.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        kv("checkpoint_every", self.checkpoint_every.to_string());
        kv("generator_seed", self.generator_seed.to_string());
        kv("vgg_seed", self.vgg_seed.to_string());
        kv("width_divisor", self.width_divisor.to_string());
        kv("encoder_seed", self.encoder_seed.to_string());
        kv("latent_penalty", format!("{:?}", self.latent_penalty));
        kv("holdout", format!("{:?}", self.holdout));
        if let Some(p) = &self.generator_weights {
            kv("generator_weights", p.display().to_string());
        }
        if let Some(p) = &self.vgg_weights {
            kv("vgg_weights", p.display().to_string());
        }
        s
    }
}
