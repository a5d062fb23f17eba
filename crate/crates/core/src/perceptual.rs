//! VGG16-topology feature extractor and the perceptual loss over named
//! layer sets, including the hypercolumn variant.

use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::generator::{fingerprint, import_named};
use crate::io::Checkpoint;
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::text2latent::LatentSpace;

pub const LAYER_NAMES: [&str; 13] = [
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv4_1", "conv4_2",
    "conv4_3", "conv5_1", "conv5_2", "conv5_3",
];
const VGG16_WIDTHS: [usize; 13] = [64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512];
const STAGE: [usize; 13] = [0, 0, 1, 1, 2, 2, 2, 3, 3, 3, 4, 4, 4];
pub const DEFAULT_WIDTH_DIVISOR: usize = 8;

fn layer_index(name: &str) -> Result<usize> {
    let lower = name.trim().to_ascii_lowercase();
    LAYER_NAMES
        .iter()
        .position(|n| *n == lower)
        .ok_or_else(|| Error::UnknownLayer {
            name: name.to_string(),
            valid: LAYER_NAMES.join(", "),
        })
}

/// Named layers whose features enter the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSet {
    layers: Vec<usize>,
    hypercolumn: bool,
}

impl LayerSet {
    pub fn new<S: AsRef<str>>(names: &[S], hypercolumn: bool) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::invalid("layer set", "at least one layer is required"));
        }
        let mut layers = Vec::with_capacity(names.len());
        for n in names {
            let i = layer_index(n.as_ref())?;
            if layers.contains(&i) {
                return Err(Error::invalid("layer set", format!("{} listed twice", LAYER_NAMES[i])));
            }
            layers.push(i);
        }
        Ok(Self { layers, hypercolumn })
    }

    /// Parses a comma- or space-separated list of layer names.
    pub fn parse(list: &str, hypercolumn: bool) -> Result<Self> {
        let names: Vec<&str> = list.split([',', ' ']).filter(|s| !s.is_empty()).collect();
        Self::new(&names, hypercolumn)
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.layers.iter().map(|&i| LAYER_NAMES[i]).collect()
    }

    pub fn hypercolumn(&self) -> bool {
        self.hypercolumn
    }

    fn deepest(&self) -> usize {
        *self.layers.iter().max().expect("non-empty layer set")
    }
}

/// Latent space and layer set of experiments 1 to 6.
pub fn experiment_layerset(id: u32) -> Result<(LatentSpace, LayerSet)> {
    use LatentSpace::{W, Z};
    let (space, names, hyper): (_, &[&str], _) = match id {
        1 => (Z, &["conv4_3", "conv5_3"], false),
        2 => (Z, &["conv3_2", "conv4_2", "conv5_2"], false),
        3 => (Z, &["conv3_2", "conv4_2", "conv5_2"], true),
        4 => (W, &["conv4_3", "conv5_3"], false),
        5 => (W, &["conv3_3", "conv4_3", "conv5_3"], false),
        6 => (W, &["conv1_2", "conv2_2", "conv3_2", "conv4_3"], false),
        _ => return Err(Error::invalid("experiment", format!("id {id} is not in 1..=6"))),
    };
    Ok((space, LayerSet::new(names, hyper)?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[Cout, Cin, 3, 3]`
    pub weight: Arc<Tensor>,
    /// `[Cout]`
    pub bias: Arc<Tensor>,
}

/// The 13 convolutions of VGG16 with ReLU after each and 2x2 average
/// pooling between stages. Widths are VGG16's divided by `width_divisor`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub width_divisor: usize,
    pub layers: Vec<ConvLayer>,
}

impl FeatureExtractor {
    /// Seeded He-normal weights and zero biases.
    pub fn init(seed: u64, width_divisor: usize) -> Result<Self> {
        if width_divisor == 0 || VGG16_WIDTHS.iter().any(|w| w % width_divisor != 0) {
            return Err(Error::invalid(
                "feature extractor",
                format!("width divisor {width_divisor} must divide 64"),
            ));
        }
        let mut cin = 3;
        let layers = VGG16_WIDTHS
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                let cout = w / width_divisor;
                let std = (2.0 / (cin * 9) as f64).sqrt();
                let mut rng = substream(seed, &format!("vgg/{}", LAYER_NAMES[i]));
                let layer = ConvLayer {
                    weight: Arc::new(Tensor::randn(&[cout, cin, 3, 3], std, &mut rng)),
                    bias: Arc::new(Tensor::zeros(&[cout])),
                };
                cin = cout;
                layer
            })
            .collect();
        Ok(Self { width_divisor, layers })
    }

    pub fn channels(&self, layer: &str) -> Result<usize> {
        Ok(self.layers[layer_index(layer)?].weight.shape()[0])
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Arc<Tensor>)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| {
                [
                    (format!("{}/weight", LAYER_NAMES[i]), &mut l.weight),
                    (format!("{}/bias", LAYER_NAMES[i]), &mut l.bias),
                ]
            })
            .collect()
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.layers.iter().flat_map(|l| [&*l.weight, &*l.bias]))
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        for (i, l) in self.layers.iter().enumerate() {
            ck.insert(format!("vgg/{}/weight", LAYER_NAMES[i]), (*l.weight).clone());
            ck.insert(format!("vgg/{}/bias", LAYER_NAMES[i]), (*l.bias).clone());
        }
    }

    /// Replaces weights with `vgg/...` tensors present in `ck`.
    pub fn import(&mut self, ck: &Checkpoint) -> Result<usize> {
        import_named(self.named_tensors_mut(), ck, "vgg")
    }

    /// Post-ReLU maps of `img: [3, S, S]` for the layers in `set`, in set
    /// order. Only layers up to the deepest requested one are computed.
    pub fn extract_graph(&self, g: &mut Graph, img: Var, set: &LayerSet) -> Result<Vec<Var>> {
        match *g.shape(img) {
            [3, h, w] if h == w && h >= 8 => {}
            ref s => {
                return Err(Error::invalid(
                    "extract_features",
                    format!("expected a square [3, S, S] image with S >= 8, got {s:?}"),
                ))
            }
        }
        let deepest = set.deepest();
        let mut maps = vec![None; deepest + 1];
        let mut x = img;
        for (i, layer) in self.layers[..=deepest].iter().enumerate() {
            if i > 0 && STAGE[i] != STAGE[i - 1] && g.shape(x)[1] >= 2 {
                x = g.avg_pool(x, 2)?;
            }
            let w = g.constant(layer.weight.clone());
            let b = g.constant(layer.bias.clone());
            x = g.conv2d(x, w)?;
            x = g.add_axis(x, b, 0)?;
            x = g.relu(x);
            maps[i] = Some(x);
        }
        Ok(set.layers.iter().map(|&i| maps[i].expect("computed layer")).collect())
    }

    pub fn extract(&self, img: &Tensor, set: &LayerSet) -> Result<Vec<(&'static str, Tensor)>> {
        let mut g = Graph::new();
        let x = g.constant(img.clone());
        let maps = self.extract_graph(&mut g, x, set)?;
        Ok(set.names().into_iter().zip(maps).map(|(n, m)| (n, g.value(m).clone())).collect())
    }

    /// The tensors the loss compares: one per layer, or a single hypercolumn.
    pub fn loss_features_graph(&self, g: &mut Graph, img: Var, set: &LayerSet) -> Result<Vec<Var>> {
        let maps = self.extract_graph(g, img, set)?;
        if set.hypercolumn {
            Ok(vec![hypercolumn(g, &maps)?])
        } else {
            Ok(maps)
        }
    }

    /// Precomputes the comparison features of a real image.
    pub fn target(&self, real: &Tensor, set: &LayerSet) -> Result<PerceptualTarget> {
        let mut g = Graph::new();
        let x = g.constant(real.clone());
        let feats = self.loss_features_graph(&mut g, x, set)?;
        Ok(PerceptualTarget {
            features: feats.into_iter().map(|v| Arc::new(g.value(v).clone())).collect(),
        })
    }

    /// Records the loss of `generated` against a precomputed target.
    pub fn loss_graph(&self, g: &mut Graph, generated: Var, target: &PerceptualTarget, set: &LayerSet) -> Result<Var> {
        let feats = self.loss_features_graph(g, generated, set)?;
        if feats.len() != target.features.len() {
            return Err(Error::invalid("perceptual_loss", "target was built for another layer set"));
        }
        let mut total: Option<Var> = None;
        for (f, t) in feats.into_iter().zip(&target.features) {
            let tv = g.constant(t.clone());
            if g.shape(f) != g.shape(tv) {
                return Err(Error::shape("perceptual_loss", g.shape(f), g.shape(tv)));
            }
            let d = g.sub(f, tv)?;
            let sq = g.square(d);
            let term = g.mean(sq);
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        Ok(total.expect("non-empty layer set"))
    }

    /// `sum over layers of mean((phi(generated) - phi(real))^2)`
    pub fn perceptual_loss(&self, generated: &Tensor, real: &Tensor, set: &LayerSet) -> Result<f64> {
        if generated.shape() != real.shape() {
            return Err(Error::shape("perceptual_loss", generated.shape(), real.shape()));
        }
        let target = self.target(real, set)?;
        let mut g = Graph::new();
        let x = g.constant(generated.clone());
        let l = self.loss_graph(&mut g, x, &target, set)?;
        Ok(g.value(l).item())
    }
}

/// Cached comparison features of one real image.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptualTarget {
    features: Vec<Arc<Tensor>>,
}

/// Resizes every `[C, H, W]` map to the largest one's spatial size and
/// concatenates along channels.
pub fn hypercolumn(g: &mut Graph, maps: &[Var]) -> Result<Var> {
    let (h, w) = maps
        .iter()
        .map(|&m| (g.shape(m)[1], g.shape(m)[2]))
        .max()
        .ok_or_else(|| Error::invalid("hypercolumn", "no feature maps"))?;
    hypercolumn_to(g, maps, h, w)
}

pub fn hypercolumn_to(g: &mut Graph, maps: &[Var], height: usize, width: usize) -> Result<Var> {
    if maps.is_empty() {
        return Err(Error::invalid("hypercolumn", "no feature maps"));
    }
    let resized = maps
        .iter()
        .map(|&m| {
            if g.shape(m)[1..] == [height, width] {
                Ok(m)
            } else {
                g.bilinear_resize(m, height, width)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if resized.len() == 1 {
        return Ok(resized[0]);
    }
    g.concat(&resized, 0)
}
