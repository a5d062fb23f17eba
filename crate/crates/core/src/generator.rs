//! Frozen miniature style-based generator: an 8-layer mapping network and a
//! synthesis network of modulated, demodulated convolutions.

use std::sync::Arc;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::io::Checkpoint;
use crate::rng::substream;
use crate::tensor::Tensor;
use crate::text2latent::{leaky_gain, Dense, LatentCode, LatentSpace, LATENT_DIM, LEAKY_SLOPE};

pub const MAPPING_LAYERS: usize = 8;
pub const DEMOD_EPS: f64 = 1e-8;
pub const PIXEL_NORM_EPS: f64 = 1e-8;
pub const SUPPORTED_RESOLUTIONS: [usize; 4] = [8, 16, 32, 64];
pub const BASE_CHANNELS: usize = 64;
pub const MIN_CHANNELS: usize = 16;

/// A convolution whose input channels are scaled by a per-sample style
/// computed from `w` through an affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModConv {
    /// `[Cout, Cin, k, k]`
    pub weight: Arc<Tensor>,
    /// `512 -> Cin`, bias initialized to one.
    pub affine: Dense,
    /// `[Cout]`
    pub bias: Arc<Tensor>,
    pub demodulate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisBlock {
    pub conv0: ModConv,
    pub conv1: ModConv,
    pub to_rgb: ModConv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub resolution: usize,
    pub mapping: Vec<Dense>,
    /// Learned `[C0, 4, 4]` input.
    pub constant: Arc<Tensor>,
    pub blocks: Vec<SynthesisBlock>,
    /// Pre-tanh scale of the summed RGB skips.
    pub output_gain: f64,
}

/// Scales input channels of `weight` by `style` and, when `demodulate`,
/// rescales every output channel to unit norm:
/// `w''[i] = w'[i] / sqrt(sum(w'[i]^2) + 1e-8)`.
pub fn modulate_weights(g: &mut Graph, weight: Var, style: Var, demodulate: bool) -> Result<Var> {
    check_modulation_shapes(g, weight, style)?;
    let ws = g.shape(weight).to_vec();
    let modulated = g.mul_axis(weight, style, 1)?;
    if !demodulate {
        return Ok(modulated);
    }
    let sq = g.square(modulated);
    let flat = g.reshape(sq, &[ws[0], ws[1] * ws[2] * ws[3]])?;
    let energy = g.sum_last(flat)?;
    let norm = g.sqrt_eps(energy, DEMOD_EPS);
    let inv = g.reciprocal(norm);
    g.mul_axis(modulated, inv, 0)
}

/// Convolves `x: [Cin, H, W]` with the style-modulated `weight`.
///
/// Computed without materializing per-sample weights: the input channels are
/// scaled by `style`, convolved with the shared `weight`, and each output
/// channel is scaled by `1/sqrt(sum_j s_j^2 sum_k w[i,j,k]^2 + 1e-8)`.
/// This equals convolving with [`modulate_weights`].
pub fn modulated_conv(g: &mut Graph, weight: Var, style: Var, x: Var, demodulate: bool) -> Result<Var> {
    check_modulation_shapes(g, weight, style)?;
    let energy = if demodulate { Some(weight_energy(g, weight)?) } else { None };
    modulated_conv_with(g, weight, energy, style, x)
}

fn check_modulation_shapes(g: &Graph, weight: Var, style: Var) -> Result<()> {
    let ws = g.shape(weight);
    let ss = g.shape(style);
    if ss.iter().product::<usize>() == 0 {
        return Err(Error::invalid("modulated_conv", "empty style vector"));
    }
    if ws.len() != 4 || ss.len() != 1 || ss[0] != ws[1] {
        return Err(Error::shape("modulated_conv", ws, ss));
    }
    Ok(())
}

/// `[Cout, Cin]` sums of squared weights over each kernel window.
fn weight_energy(g: &mut Graph, weight: Var) -> Result<Var> {
    let ws = g.shape(weight).to_vec();
    let sq = g.square(weight);
    let flat = g.reshape(sq, &[ws[0], ws[1], ws[2] * ws[3]])?;
    g.sum_last(flat)
}

fn modulated_conv_with(g: &mut Graph, weight: Var, energy: Option<Var>, style: Var, x: Var) -> Result<Var> {
    let scaled = g.mul_axis(x, style, 0)?;
    let y = g.conv2d(scaled, weight)?;
    let Some(energy) = energy else { return Ok(y) };
    let (cout, cin) = (g.shape(weight)[0], g.shape(weight)[1]);
    let s2 = g.square(style);
    let col = g.reshape(s2, &[cin, 1])?;
    let e = g.matmul(energy, col)?;
    let e = g.reshape(e, &[cout])?;
    let norm = g.sqrt_eps(e, DEMOD_EPS);
    let inv = g.reciprocal(norm);
    g.mul_axis(y, inv, 0)
}

impl ModConv {
    fn init(seed: u64, tag: &str, cin: usize, cout: usize, k: usize, demodulate: bool) -> Self {
        let mut rng = substream(seed, tag);
        let std = if demodulate { 1.0 } else { 1.0 / ((cin * k * k) as f64).sqrt() };
        ModConv {
            weight: Arc::new(Tensor::randn(&[cout, cin, k, k], std, &mut rng)),
            affine: Dense {
                weight: Arc::new(Tensor::randn(&[LATENT_DIM, cin], 1.0 / (LATENT_DIM as f64).sqrt(), &mut rng)),
                bias: Arc::new(Tensor::ones(&[cin])),
            },
            bias: Arc::new(Tensor::zeros(&[cout])),
            demodulate,
        }
    }

    fn tensors(&self, prefix: &str) -> Vec<(String, &Arc<Tensor>)> {
        vec![
            (format!("{prefix}/weight"), &self.weight),
            (format!("{prefix}/affine/weight"), &self.affine.weight),
            (format!("{prefix}/affine/bias"), &self.affine.bias),
            (format!("{prefix}/bias"), &self.bias),
        ]
    }

    fn tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Arc<Tensor>)> {
        vec![
            (format!("{prefix}/weight"), &mut self.weight),
            (format!("{prefix}/affine/weight"), &mut self.affine.weight),
            (format!("{prefix}/affine/bias"), &mut self.affine.bias),
            (format!("{prefix}/bias"), &mut self.bias),
        ]
    }

    /// Styles for a `[B, 512]` batch, `[B, Cin]`.
    fn styles(&self, g: &mut Graph, w: Var) -> Result<Var> {
        let a = g.constant(self.affine.weight.clone());
        let b = g.constant(self.affine.bias.clone());
        let s = g.matmul(w, a)?;
        g.add(s, b)
    }

    /// Graph constants for the weight, its energy and the bias, shared by
    /// every sample of a batch.
    fn bind(&self, g: &mut Graph) -> Result<BoundConv> {
        let weight = g.constant(self.weight.clone());
        let energy = if self.demodulate { Some(weight_energy(g, weight)?) } else { None };
        let bias = g.constant(self.bias.clone());
        Ok(BoundConv { weight, energy, bias })
    }
}

#[derive(Clone, Copy)]
struct BoundConv {
    weight: Var,
    energy: Option<Var>,
    bias: Var,
}

impl BoundConv {
    fn apply(&self, g: &mut Graph, x: Var, style: Var) -> Result<Var> {
        let y = modulated_conv_with(g, self.weight, self.energy, style, x)?;
        g.add_axis(y, self.bias, 0)
    }
}

/// Number of synthesis blocks for a resolution: 4x4 up to `resolution`.
pub fn block_count(resolution: usize) -> Result<usize> {
    if !SUPPORTED_RESOLUTIONS.contains(&resolution) {
        return Err(Error::invalid(
            "gen_init",
            format!("resolution {resolution} is not one of {SUPPORTED_RESOLUTIONS:?}"),
        ));
    }
    Ok(resolution.trailing_zeros() as usize - 1)
}

pub fn block_channels(block: usize) -> usize {
    (BASE_CHANNELS >> block).max(MIN_CHANNELS)
}

impl GeneratorParams {
    pub fn init(seed: u64, resolution: usize) -> Result<Self> {
        let n_blocks = block_count(resolution)?;
        let gain = leaky_gain(LEAKY_SLOPE);
        let mapping = (0..MAPPING_LAYERS)
            .map(|i| {
                let mut rng = substream(seed, &format!("gen/mapping{i}"));
                Dense {
                    weight: Arc::new(Tensor::randn(
                        &[LATENT_DIM, LATENT_DIM],
                        gain / (LATENT_DIM as f64).sqrt(),
                        &mut rng,
                    )),
                    bias: Arc::new(Tensor::zeros(&[LATENT_DIM])),
                }
            })
            .collect();
        let constant = Arc::new(Tensor::randn(
            &[BASE_CHANNELS, 4, 4],
            1.0,
            &mut substream(seed, "gen/constant"),
        ));
        let mut cin = BASE_CHANNELS;
        let blocks = (0..n_blocks)
            .map(|b| {
                let c = block_channels(b);
                let block = SynthesisBlock {
                    conv0: ModConv::init(seed, &format!("gen/block{b}/conv0"), cin, c, 3, true),
                    conv1: ModConv::init(seed, &format!("gen/block{b}/conv1"), c, c, 3, true),
                    to_rgb: ModConv::init(seed, &format!("gen/block{b}/to_rgb"), c, 3, 1, false),
                };
                cin = c;
                block
            })
            .collect();
        Ok(Self {
            resolution,
            mapping,
            constant,
            blocks,
            output_gain: 1.0 / (n_blocks as f64).sqrt(),
        })
    }

    pub fn named_tensors(&self) -> Vec<(String, &Arc<Tensor>)> {
        let mut out = Vec::new();
        for (i, l) in self.mapping.iter().enumerate() {
            out.push((format!("mapping{i}/weight"), &l.weight));
            out.push((format!("mapping{i}/bias"), &l.bias));
        }
        out.push(("constant".to_string(), &self.constant));
        for (b, blk) in self.blocks.iter().enumerate() {
            out.extend(blk.conv0.tensors(&format!("block{b}/conv0")));
            out.extend(blk.conv1.tensors(&format!("block{b}/conv1")));
            out.extend(blk.to_rgb.tensors(&format!("block{b}/to_rgb")));
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Arc<Tensor>)> {
        let mut out = Vec::new();
        for (i, l) in self.mapping.iter_mut().enumerate() {
            out.push((format!("mapping{i}/weight"), &mut l.weight));
            out.push((format!("mapping{i}/bias"), &mut l.bias));
        }
        out.push(("constant".to_string(), &mut self.constant));
        for (b, blk) in self.blocks.iter_mut().enumerate() {
            out.extend(blk.conv0.tensors_mut(&format!("block{b}/conv0")));
            out.extend(blk.conv1.tensors_mut(&format!("block{b}/conv1")));
            out.extend(blk.to_rgb.tensors_mut(&format!("block{b}/to_rgb")));
        }
        out
    }

    /// FNV-1a over every parameter's bits; equal iff no weight changed.
    pub fn fingerprint(&self) -> u64 {
        fingerprint(self.named_tensors().into_iter().map(|(_, t)| &**t))
    }

    pub fn write_to(&self, ck: &mut Checkpoint) {
        for (name, t) in self.named_tensors() {
            ck.insert(format!("gen/{name}"), (**t).clone());
        }
    }

    /// Replaces parameters with `gen/...` tensors present in `ck`; returns
    /// how many were imported.
    pub fn import(&mut self, ck: &Checkpoint) -> Result<usize> {
        import_named(self.named_tensors_mut(), ck, "gen")
    }

    /// `[B, 512]` z batch to `[B, 512]` w: pixel norm per row, then the FC stack.
    pub fn mapping_graph(&self, g: &mut Graph, z: Var) -> Result<Var> {
        let shape = g.shape(z).to_vec();
        if shape.len() != 2 || shape[1] != LATENT_DIM {
            return Err(Error::shape("mapping", &shape, &[LATENT_DIM]));
        }
        let rows = (0..shape[0])
            .map(|i| {
                let r = g.row(z, i)?;
                let n = g.pixel_norm(r, PIXEL_NORM_EPS)?;
                g.reshape(n, &[1, LATENT_DIM])
            })
            .collect::<Result<Vec<_>>>()?;
        let mut h = if rows.len() == 1 { rows[0] } else { g.concat(&rows, 0)? };
        for l in &self.mapping {
            let w = g.constant(l.weight.clone());
            let b = g.constant(l.bias.clone());
            h = g.matmul(h, w)?;
            h = g.add(h, b)?;
            h = g.leaky_relu(h, LEAKY_SLOPE);
        }
        Ok(h)
    }

    /// `[B, 512]` w batch to B images `[3, R, R]`.
    pub fn synthesis_graph(&self, g: &mut Graph, w: Var) -> Result<Vec<Var>> {
        let shape = g.shape(w).to_vec();
        if shape.len() != 2 || shape[1] != LATENT_DIM {
            return Err(Error::shape("synthesis", &shape, &[LATENT_DIM]));
        }
        let batch = shape[0];
        let mut styles = Vec::with_capacity(self.blocks.len());
        let mut convs = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            styles.push([
                blk.conv0.styles(g, w)?,
                blk.conv1.styles(g, w)?,
                blk.to_rgb.styles(g, w)?,
            ]);
            convs.push([blk.conv0.bind(g)?, blk.conv1.bind(g)?, blk.to_rgb.bind(g)?]);
        }
        let constant = g.constant(self.constant.clone());
        let act_gain = leaky_gain(LEAKY_SLOPE);
        let mut images = Vec::with_capacity(batch);
        for i in 0..batch {
            let mut x = constant;
            let mut rgb: Option<Var> = None;
            for (b, [conv0, conv1, to_rgb]) in convs.iter().enumerate() {
                if b > 0 {
                    x = g.upsample2(x)?;
                }
                for (conv, s) in [(conv0, styles[b][0]), (conv1, styles[b][1])] {
                    let s = g.row(s, i)?;
                    x = conv.apply(g, x, s)?;
                    x = g.leaky_relu(x, LEAKY_SLOPE);
                    x = g.scale(x, act_gain);
                }
                let s = g.row(styles[b][2], i)?;
                let y = to_rgb.apply(g, x, s)?;
                rgb = Some(match rgb {
                    None => y,
                    Some(prev) => {
                        let up = g.upsample2(prev)?;
                        g.add(up, y)?
                    }
                });
            }
            let rgb = rgb.expect("at least one block");
            let scaled = g.scale(rgb, self.output_gain);
            images.push(g.tanh(scaled));
        }
        Ok(images)
    }

    pub fn mapping_forward(&self, z: &LatentCode) -> Result<LatentCode> {
        z.expect_space(LatentSpace::Z)?;
        let mut g = Graph::new();
        let zv = g.constant(z.to_tensor());
        let w = self.mapping_graph(&mut g, zv)?;
        LatentCode::new(g.value(w).data().to_vec(), LatentSpace::W)
    }

    pub fn synthesize(&self, w: &LatentCode) -> Result<Tensor> {
        w.expect_space(LatentSpace::W)?;
        let mut g = Graph::new();
        let wv = g.constant(w.to_tensor());
        let img = self.synthesis_graph(&mut g, wv)?[0];
        Ok(g.value(img).clone())
    }

    /// Synthesizes from a latent of either space, mapping Z codes first.
    pub fn generate(&self, latent: &LatentCode) -> Result<Tensor> {
        match latent.space() {
            LatentSpace::W => self.synthesize(latent),
            LatentSpace::Z => self.synthesize(&self.mapping_forward(latent)?),
        }
    }
}

pub(crate) fn fingerprint<'a>(tensors: impl Iterator<Item = &'a Tensor>) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    let mut feed = |bytes: &[u8]| {
        for &b in bytes {
            h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
        }
    };
    for t in tensors {
        for &e in t.shape() {
            feed(&(e as u64).to_le_bytes());
        }
        for v in t.data() {
            feed(&v.to_bits().to_le_bytes());
        }
    }
    h
}

pub(crate) fn import_named(
    targets: Vec<(String, &mut Arc<Tensor>)>,
    ck: &Checkpoint,
    prefix: &str,
) -> Result<usize> {
    let present: Vec<&str> = ck.with_prefix(prefix).map(|(name, _)| name).collect();
    if present.is_empty() {
        return Ok(0);
    }
    let expected: std::collections::BTreeSet<String> = targets.iter().map(|(n, _)| n.clone()).collect();
    if present.len() != expected.len() || present.iter().any(|n| !expected.contains(*n)) {
        return Err(Error::format(
            "checkpoint",
            format!("{prefix}/ tensors do not match the configured architecture"),
        ));
    }
    for (name, slot) in &targets {
        let t = ck.require(&format!("{prefix}/{name}"))?;
        if t.shape() != slot.shape() {
            return Err(Error::shape("import", t.shape(), slot.shape()));
        }
    }
    for (name, slot) in targets {
        *slot = Arc::new(ck.require(&format!("{prefix}/{name}"))?.clone());
    }
    Ok(expected.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::rng::seeded;

    fn w_code(seed: u64) -> LatentCode {
        let t = Tensor::randn(&[LATENT_DIM], 1.0, &mut seeded(seed));
        LatentCode::new(t.into_data(), LatentSpace::W).unwrap()
    }

    fn demodulated(weight: &Tensor, style: &Tensor) -> Tensor {
        let mut g = Graph::new();
        let w = g.constant(weight.clone());
        let s = g.constant(style.clone());
        let out = modulate_weights(&mut g, w, s, true).unwrap();
        g.value(out).clone()
    }

    fn channel_energy(w: &Tensor) -> Vec<f64> {
        let per = w.numel() / w.shape()[0];
        w.data().chunks(per).map(|c| c.iter().map(|v| v * v).sum()).collect()
    }

    #[test]
    fn seeded_and_sized() {
        let a = GeneratorParams::init(7, 16).unwrap();
        assert_eq!(a, GeneratorParams::init(7, 16).unwrap());
        assert_eq!(a.fingerprint(), GeneratorParams::init(7, 16).unwrap().fingerprint());
        assert_ne!(a.fingerprint(), GeneratorParams::init(8, 16).unwrap().fingerprint());
        assert_eq!(GeneratorParams::init(1, 32).unwrap().blocks.len(), 4);
        assert_eq!(GeneratorParams::init(1, 64).unwrap().blocks.len(), 5);
        assert!(GeneratorParams::init(1, 12).is_err());
        assert!(GeneratorParams::init(1, 128).is_err());
        let chans: Vec<_> = a.blocks.iter().map(|b| b.conv1.weight.shape()[0]).collect();
        assert_eq!(chans, vec![64, 32, 16]);
    }

    #[test]
    fn unit_norm_weights_pass_through_demodulation() {
        let mut rng = seeded(3);
        let raw = Tensor::randn(&[4, 3, 3, 3], 1.0, &mut rng);
        let energy = channel_energy(&raw);
        let per = raw.numel() / 4;
        let unit = Tensor::new(
            raw.shape().to_vec(),
            raw.data().iter().enumerate().map(|(i, v)| v / energy[i / per].sqrt()).collect(),
        )
        .unwrap();
        let out = demodulated(&unit, &Tensor::ones(&[3]));
        for (a, b) in out.data().iter().zip(unit.data()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn demodulated_channels_have_unit_energy_and_ignore_style_scale() {
        for seed in 0..10 {
            let mut rng = seeded(seed);
            let weight = Tensor::randn(&[6, 5, 3, 3], 1.0, &mut rng);
            let style = Tensor::uniform(&[5], 0.2, 2.0, &mut rng);
            let out = demodulated(&weight, &style);
            for e in channel_energy(&out) {
                assert!((e - 1.0).abs() < 1e-6, "{e}");
            }
            let scaled = demodulated(&weight, &style.map(|v| v * 7.5));
            for (a, b) in out.data().iter().zip(scaled.data()) {
                assert!((a - b).abs() <= 1e-6 * a.abs().max(1e-12), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn fused_path_equals_explicit_weights() {
        let mut rng = seeded(21);
        for demod in [true, false] {
            let weight = Tensor::randn(&[5, 4, 3, 3], 1.0, &mut rng);
            let style = Tensor::uniform(&[4], -1.5, 1.5, &mut rng);
            let x = Tensor::randn(&[4, 6, 6], 1.0, &mut rng);
            let mut g = Graph::new();
            let (wv, sv, xv) = (g.constant(weight), g.constant(style), g.constant(x));
            let fused = modulated_conv(&mut g, wv, sv, xv, demod).unwrap();
            let explicit = modulate_weights(&mut g, wv, sv, demod).unwrap();
            let reference = g.conv2d(xv, explicit).unwrap();
            for (a, b) in g.value(fused).data().iter().zip(g.value(reference).data()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn modulated_conv_gradients_wrt_style_and_input() {
        let mut rng = seeded(22);
        let weight = Tensor::randn(&[3, 4, 3, 3], 1.0, &mut rng);
        let style = Tensor::uniform(&[4], 0.5, 1.5, &mut rng);
        let x = Tensor::randn(&[4, 5, 5], 1.0, &mut rng);
        let r = grad_check(
            |g, s| {
                let (w, xv) = (g.constant(weight.clone()), g.constant(x.clone()));
                let y = modulated_conv(g, w, s, xv, true)?;
                let sq = g.square(y);
                Ok(g.mean(sq))
            },
            &style,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
        let r = grad_check(
            |g, xv| {
                let (w, s) = (g.constant(weight.clone()), g.constant(style.clone()));
                let y = modulated_conv(g, w, s, xv, true)?;
                let sq = g.square(y);
                Ok(g.mean(sq))
            },
            &x,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(r.passed(), "{r:?}");
    }

    #[test]
    fn empty_style_is_rejected() {
        let mut g = Graph::new();
        let w = g.constant(Tensor::zeros(&[2, 0, 1, 1]));
        let s = g.constant(Tensor::zeros(&[0]));
        assert!(modulate_weights(&mut g, w, s, true).is_err());
    }

    #[test]
    fn mapping_is_scale_invariant_and_tagged() {
        let gen = GeneratorParams::init(2, 8).unwrap();
        let z = Tensor::randn(&[LATENT_DIM], 1.0, &mut seeded(4)).into_data();
        let a = gen.mapping_forward(&LatentCode::new(z.clone(), LatentSpace::Z).unwrap()).unwrap();
        let b = gen
            .mapping_forward(&LatentCode::new(z.iter().map(|v| v * 3.7).collect(), LatentSpace::Z).unwrap())
            .unwrap();
        assert_eq!(a.space(), LatentSpace::W);
        assert_eq!(a.values().len(), 512);
        // Equal up to the pixel-norm epsilon.
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() <= 1e-7 * (1.0 + x.abs()), "{x} vs {y}");
        }
        assert_eq!(a, gen.mapping_forward(&LatentCode::new(z, LatentSpace::Z).unwrap()).unwrap());
        assert!(matches!(gen.mapping_forward(&w_code(1)), Err(Error::LatentSpace { .. })));
        assert!(gen.synthesize(&LatentCode::new(vec![0.0; 512], LatentSpace::Z).unwrap()).is_err());
    }

    #[test]
    fn images_are_deterministic_and_shaped() {
        let gen = GeneratorParams::init(5, 16).unwrap();
        let a = gen.synthesize(&w_code(1)).unwrap();
        assert_eq!(a.shape(), &[3, 16, 16]);
        assert_eq!(a, gen.synthesize(&w_code(1)).unwrap());
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn pixel_statistics_over_random_codes() {
        let gen = GeneratorParams::init(11, 8).unwrap();
        let mut g = Graph::new();
        let w = g.constant(Tensor::randn(&[256, LATENT_DIM], 1.0, &mut seeded(12)));
        let imgs = gen.synthesis_graph(&mut g, w).unwrap();
        let all: Vec<f64> = imgs.iter().flat_map(|v| g.value(*v).data().to_vec()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!((-0.5..=0.5).contains(&mean), "mean {mean}");
        assert!(var > 1e-3, "var {var}");
        let saturated = all.iter().filter(|v| v.abs() > 0.99).count() as f64 / all.len() as f64;
        assert!(saturated < 0.1, "saturated fraction {saturated}");
    }

    #[test]
    fn distinct_codes_give_distinct_images() {
        let gen = GeneratorParams::init(3, 8).unwrap();
        let mut rng = seeded(99);
        for _ in 0..100 {
            let a = Tensor::randn(&[LATENT_DIM], 1.0, &mut rng).into_data();
            let b: Vec<f64> = a.iter().map(|v| v + 0.2 / (LATENT_DIM as f64).sqrt() * rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
            let dist = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            if dist <= 0.1 {
                continue;
            }
            let ia = gen.synthesize(&LatentCode::new(a, LatentSpace::W).unwrap()).unwrap();
            let ib = gen.synthesize(&LatentCode::new(b, LatentSpace::W).unwrap()).unwrap();
            let mse = ia.data().iter().zip(ib.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
            assert!(mse > 0.0);
        }
    }

    #[test]
    fn image_gradient_wrt_w_matches_finite_differences() {
        let gen = GeneratorParams::init(6, 8).unwrap();
        let w = Tensor::randn(&[1, LATENT_DIM], 1.0, &mut seeded(6));
        let report = grad_check(
            |g, v| {
                let img = gen.synthesis_graph(g, v)?[0];
                Ok(g.mean(img))
            },
            &w,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn import_replaces_named_tensors() {
        let src = GeneratorParams::init(1, 8).unwrap();
        let mut dst = GeneratorParams::init(2, 8).unwrap();
        let mut ck = Checkpoint::new();
        src.write_to(&mut ck);
        assert_eq!(dst.import(&ck).unwrap(), src.named_tensors().len());
        assert_eq!(dst.fingerprint(), src.fingerprint());
        let mut wrong = GeneratorParams::init(2, 16).unwrap();
        assert!(wrong.import(&ck).is_err());
    }
}
