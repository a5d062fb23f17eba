//! The trainable text-to-latent MLP.

use std::fmt;
use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::encoder::{Embedding, EMBEDDING_DIM};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::rng::substream;
use crate::tensor::Tensor;

pub const LATENT_DIM: usize = 512;
pub const LEAKY_SLOPE: f64 = 0.2;
pub const DEFAULT_HIDDEN: [usize; 3] = [512, 512, 512];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LatentSpace {
    Z,
    W,
}

impl LatentSpace {
    pub fn name(self) -> &'static str {
        match self {
            LatentSpace::Z => "Z",
            LatentSpace::W => "W",
        }
    }
}

impl fmt::Display for LatentSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for LatentSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "Z" | "z" => Ok(LatentSpace::Z),
            "W" | "w" => Ok(LatentSpace::W),
            other => Err(Error::Config(format!("latent space must be Z or W, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    values: Vec<f64>,
    space: LatentSpace,
}

impl LatentCode {
    pub fn new(values: Vec<f64>, space: LatentSpace) -> Result<Self> {
        if values.len() != LATENT_DIM {
            return Err(Error::invalid(
                "latent code",
                format!("expected {LATENT_DIM} values, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent code", "non-finite value"));
        }
        Ok(Self { values, space })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn space(&self) -> LatentSpace {
        self.space
    }

    pub fn expect_space(&self, space: LatentSpace) -> Result<&Self> {
        if self.space == space {
            Ok(self)
        } else {
            Err(Error::LatentSpace {
                expected: space.name(),
                found: self.space.name(),
            })
        }
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, LATENT_DIM], self.values.clone()).expect("latent shape")
    }
}

/// A fully-connected layer `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Arc<Tensor>,
    pub bias: Arc<Tensor>,
}

impl Dense {
    pub fn fan_in(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn fan_out(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
    pub space: LatentSpace,
}

/// Gain that keeps activations at unit scale through leaky ReLU.
pub fn leaky_gain(slope: f64) -> f64 {
    (2.0 / (1.0 + slope * slope)).sqrt()
}

impl MlpParams {
    /// Seeded scaled-normal initialization. Inputs are unit-norm embeddings,
    /// so the first layer is scaled by its gain alone; later layers also by
    /// `1/sqrt(fan_in)`. Biases start at zero.
    pub fn init(seed: u64, hidden: &[usize], space: LatentSpace) -> Result<Self> {
        if hidden.is_empty() {
            return Err(Error::invalid("t2l_init", "at least one hidden layer is required"));
        }
        if hidden.contains(&0) {
            return Err(Error::invalid("t2l_init", "hidden widths must be positive"));
        }
        let widths: Vec<usize> = std::iter::once(EMBEDDING_DIM)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(LATENT_DIM))
            .collect();
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let (fin, fout) = (widths[i], widths[i + 1]);
                let gain = if i + 1 < n { leaky_gain(LEAKY_SLOPE) } else { 1.0 };
                let std = if i == 0 { gain } else { gain / (fin as f64).sqrt() };
                let mut rng = substream(seed, &format!("t2l/layer{i}"));
                Dense {
                    weight: Arc::new(Tensor::randn(&[fin, fout], std, &mut rng)),
                    bias: Arc::new(Tensor::zeros(&[fout])),
                }
            })
            .collect();
        Ok(Self { layers, space })
    }

    pub fn hidden(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(Dense::fan_out).collect()
    }

    /// Weights and biases in layer order; the order used by the optimizer.
    pub fn tensors(&self) -> Vec<&Arc<Tensor>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Arc<Tensor>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Records the forward pass of a `[B, 768]` batch. Returns the `[B, 512]`
    /// output and the parameter variables in [`MlpParams::tensors`] order.
    pub fn forward_graph(&self, g: &mut Graph, x: Var) -> Result<(Var, Vec<Var>)> {
        let mut params = Vec::with_capacity(2 * self.layers.len());
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            let w = g.param(layer.weight.clone());
            let b = g.param(layer.bias.clone());
            params.extend([w, b]);
            h = g.matmul(h, w)?;
            h = g.add(h, b)?;
            if i + 1 < self.layers.len() {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        Ok((h, params))
    }

    pub fn forward(&self, e: &Embedding) -> Result<LatentCode> {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, EMBEDDING_DIM], e.values().to_vec())?);
        let (y, _) = self.forward_graph(&mut g, x)?;
        LatentCode::new(g.value(y).data().to_vec(), self.space)
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        for (i, l) in self.layers.iter().enumerate() {
            ck.insert(format!("t2l/layer{i}/weight"), (*l.weight).clone());
            ck.insert(format!("t2l/layer{i}/bias"), (*l.bias).clone());
        }
    }

    pub fn read_from(ck: &Checkpoint, space: LatentSpace) -> Result<Self> {
        let mut layers = Vec::new();
        while let Some(w) = ck.get(&format!("t2l/layer{}/weight", layers.len())) {
            let b = ck.require(&format!("t2l/layer{}/bias", layers.len()))?;
            if w.rank() != 2 || b.shape() != [w.shape()[1]] {
                return Err(Error::shape("checkpoint t2l layer", w.shape(), b.shape()));
            }
            layers.push(Dense {
                weight: Arc::new(w.clone()),
                bias: Arc::new(b.clone()),
            });
        }
        let bad = |reason: String| Error::format("checkpoint", reason);
        if layers.len() < 2 {
            return Err(bad("text-to-latent model needs at least two layers".into()));
        }
        if layers[0].fan_in() != EMBEDDING_DIM || layers.last().map(Dense::fan_out) != Some(LATENT_DIM) {
            return Err(bad(format!("model must map {EMBEDDING_DIM} to {LATENT_DIM}")));
        }
        if layers.windows(2).any(|p| p[0].fan_out() != p[1].fan_in()) {
            return Err(bad("inconsistent layer widths".into()));
        }
        Ok(Self { layers, space })
    }
}
