use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvDims};
use crate::tensor::Tensor;

/// Handle to a node recorded in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Conv2d { x: Var, w: Var, dims: ConvDims },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Tanh(Var),
    Square(Var),
    SqrtEps(Var),
    Reciprocal(Var),
    Sum(Var),
    Mean(Var),
    L2Norm(Var),
    SumLast(Var),
    Reshape(Var),
    Row(Var, usize),
    Concat(Vec<Var>, usize),
    PixelNorm(Var, f64),
    MulAxis { x: Var, s: Var, axis: usize },
    AddAxis { x: Var, b: Var, axis: usize },
    Resize(Var),
    Upsample2(Var),
    AvgPool(Var, usize),
    GlobalAvgPool(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    requires_grad: bool,
    /// True when a gradient can reach this node from a `requires_grad` leaf.
    tracked: bool,
}

/// Per-step record of executed operations, in topological order.
///
/// Every operation is appended after its inputs, so a reverse sweep over the
/// node list is a valid backpropagation order. Values are shared through
/// `Arc`, which lets frozen weights enter a graph without copying.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
    kink_signature: Option<u64>,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that fingerprints which side of every activation kink each
    /// input fell on. Finite-difference checks compare fingerprints to find
    /// samples that straddle a non-differentiable point.
    pub fn with_kink_tracking() -> Self {
        Graph {
            kink_signature: Some(FNV_OFFSET),
            ..Self::default()
        }
    }

    pub fn kink_signature(&self) -> Option<u64> {
        self.kink_signature
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, tracked: bool) -> Var {
        self.push_arc(Arc::new(value), op, false, tracked)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op, requires_grad: bool, tracked: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient on `backward`.
    pub fn param(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push_arc(value.into(), Op::Leaf, true, true)
    }

    /// Leaf that is never differentiated.
    pub fn constant(&mut self, value: impl Into<Arc<Tensor>>) -> Var {
        self.push_arc(value.into(), Op::Leaf, false, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a `requires_grad` leaf, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.clear();
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(x).map(f);
        let t = self.tracked(x);
        self.push(out, op, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(self.data(a), self.data(b), m, k, n);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b), t))
    }

    /// Stride-1 convolution with "same" zero padding.
    /// `x: [Cin, H, W]`, `w: [Cout, Cin, k, k]` with `k` in {1, 3}.
    pub fn conv2d(&mut self, x: Var, w: Var) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 3 || sw.len() != 4 || sw[1] != sx[0] || sw[2] != sw[3] {
            return Err(Error::shape("conv2d", sx, sw));
        }
        if sw[2] != 1 && sw[2] != 3 {
            return Err(Error::invalid("conv2d", format!("unsupported kernel size {}", sw[2])));
        }
        let dims = ConvDims {
            cin: sx[0],
            cout: sw[0],
            h: sx[1],
            w: sx[2],
            k: sw[2],
        };
        let out = kernels::conv2d(self.data(x), self.data(w), dims);
        let t = self.tracked(x) || self.tracked(w);
        let shape = vec![dims.cout, dims.h, dims.w];
        Ok(self.push(Tensor::new(shape, out)?, Op::Conv2d { x, w, dims }, t))
    }

    /// Output shape of a broadcasting binary op: the smaller operand's shape
    /// must equal the trailing extents of the larger one.
    fn broadcast_shape(&self, op: &'static str, a: Var, b: Var) -> Result<Vec<usize>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (big, small) = if sa.len() >= sb.len() { (sa, sb) } else { (sb, sa) };
        if big[big.len() - small.len()..] != *small {
            return Err(Error::shape(op, sa, sb));
        }
        Ok(big.to_vec())
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let shape = self.broadcast_shape(name, a, b)?;
        let (da, db) = (self.data(a), self.data(b));
        let n: usize = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        if da.len() == db.len() {
            out.extend(da.iter().zip(db).map(|(&x, &y)| f(x, y)));
        } else if da.len() > db.len() {
            for chunk in da.chunks(db.len().max(1)) {
                out.extend(chunk.iter().zip(db).map(|(&x, &y)| f(x, y)));
            }
        } else {
            for chunk in db.chunks(da.len().max(1)) {
                out.extend(chunk.iter().zip(da).map(|(&y, &x)| f(x, y)));
            }
        }
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(Tensor::new(shape, out)?, op, t))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |v| v * c)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |v| v + c)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        if let Some(sig) = self.kink_signature.as_mut() {
            for &v in self.nodes[x.0].value.data() {
                *sig = (*sig ^ u64::from(v > 0.0)).wrapping_mul(FNV_PRIME);
            }
        }
        self.unary(x, Op::LeakyRelu(x, slope), |v| if v > 0.0 { v } else { slope * v })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |v| v * v)
    }

    /// `sqrt(x + eps)`; inputs must satisfy `x > -eps`.
    pub fn sqrt_eps(&mut self, x: Var, eps: f64) -> Var {
        self.unary(x, Op::SqrtEps(x), |v| (v + eps).sqrt())
    }

    pub fn reciprocal(&mut self, x: Var) -> Var {
        self.unary(x, Op::Reciprocal(x), |v| 1.0 / v)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).sum();
        let t = self.tracked(x);
        self.push(Tensor::scalar(s), Op::Sum(x), t)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / v.numel() as f64;
        let t = self.tracked(x);
        self.push(Tensor::scalar(m), Op::Mean(x), t)
    }

    pub fn l2_norm(&mut self, x: Var) -> Var {
        let n = self.data(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        let t = self.tracked(x);
        self.push(Tensor::scalar(n), Op::L2Norm(x), t)
    }

    /// Sums over the last axis.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let Some((&last, lead)) = shape.split_last() else {
            return Err(Error::invalid("sum_last", "scalar input"));
        };
        let out: Vec<f64> = if last == 0 {
            vec![0.0; lead.iter().product()]
        } else {
            self.data(x).chunks(last).map(|c| c.iter().sum()).collect()
        };
        let t = self.tracked(x);
        Ok(self.push(Tensor::new(lead.to_vec(), out)?, Op::SumLast(x), t))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        let t = self.tracked(x);
        Ok(self.push(out, Op::Reshape(x), t))
    }

    /// Row `i` of a `[rows, cols]` tensor, as a `[cols]` vector.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 || i >= s[0] {
            return Err(Error::invalid("row", format!("row {i} of shape {s:?}")));
        }
        let cols = s[1];
        let out = Tensor::vector(self.data(x)[i * cols..(i + 1) * cols].to_vec());
        let t = self.tracked(x);
        Ok(self.push(out, Op::Row(x, i), t))
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = xs.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut shape = base.clone();
        shape[axis] = 0;
        for &x in xs {
            let s = self.shape(x);
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            shape[axis] += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &x in xs {
                let block = self.shape(x)[axis] * inner;
                out.extend_from_slice(&self.data(x)[o * block..(o + 1) * block]);
            }
        }
        let t = xs.iter().any(|&x| self.tracked(x));
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat(xs.to_vec(), axis), t))
    }

    /// Scales every vector along axis 0 to unit RMS:
    /// `y[:, p] = x[:, p] / sqrt(mean(x[:, p]^2) + eps)`.
    /// A rank-1 input is treated as a single vector.
    pub fn pixel_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || shape[0] == 0 {
            return Err(Error::invalid("pixel_norm", format!("shape {shape:?}")));
        }
        let c = shape[0];
        let p = self.value(x).numel() / c;
        let d = self.data(x);
        let mut out = vec![0.0; d.len()];
        for pos in 0..p {
            let ms = (0..c).map(|ch| d[ch * p + pos].powi(2)).sum::<f64>() / c as f64;
            let r = 1.0 / (ms + eps).sqrt();
            for ch in 0..c {
                out[ch * p + pos] = d[ch * p + pos] * r;
            }
        }
        let t = self.tracked(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::PixelNorm(x, eps), t))
    }

    fn axis_layout(&self, op: &'static str, x: Var, v: Var, axis: usize) -> Result<(usize, usize)> {
        let (sx, sv) = (self.shape(x), self.shape(v));
        if axis >= sx.len() || sv.len() != 1 || sv[0] != sx[axis] {
            return Err(Error::shape(op, sx, sv));
        }
        Ok((sx[axis], sx[axis + 1..].iter().product()))
    }

    /// `y[.., i, ..] = x[.., i, ..] * s[i]` along `axis`.
    pub fn mul_axis(&mut self, x: Var, s: Var, axis: usize) -> Result<Var> {
        let (n, inner) = self.axis_layout("mul_axis", x, s, axis)?;
        let (dx, ds) = (self.data(x), self.data(s));
        let out = axis_map(dx, ds, n, inner, |v, c| v * c);
        let shape = self.shape(x).to_vec();
        let t = self.tracked(x) || self.tracked(s);
        Ok(self.push(Tensor::new(shape, out)?, Op::MulAxis { x, s, axis }, t))
    }

    /// `y[.., i, ..] = x[.., i, ..] + b[i]` along `axis`.
    pub fn add_axis(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let (n, inner) = self.axis_layout("add_axis", x, b, axis)?;
        let (dx, db) = (self.data(x), self.data(b));
        let out = axis_map(dx, db, n, inner, |v, c| v + c);
        let shape = self.shape(x).to_vec();
        let t = self.tracked(x) || self.tracked(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddAxis { x, b, axis }, t))
    }

    fn chw(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize)> {
        match *self.shape(x) {
            [c, h, w] if h > 0 && w > 0 => Ok((c, h, w)),
            ref s => Err(Error::invalid(op, format!("expected [C, H, W], got {s:?}"))),
        }
    }

    pub fn bilinear_resize(&mut self, x: Var, height: usize, width: usize) -> Result<Var> {
        let (c, h, w) = self.chw("bilinear_resize", x)?;
        if height == 0 || width == 0 {
            return Err(Error::invalid("bilinear_resize", "zero target size"));
        }
        let out = kernels::bilinear_resize(self.data(x), c, h, w, height, width);
        let t = self.tracked(x);
        Ok(self.push(Tensor::new(vec![c, height, width], out)?, Op::Resize(x), t))
    }

    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw("upsample2", x)?;
        let out = kernels::upsample_nearest2(self.data(x), c, h, w);
        let t = self.tracked(x);
        Ok(self.push(Tensor::new(vec![c, 2 * h, 2 * w], out)?, Op::Upsample2(x), t))
    }

    pub fn avg_pool(&mut self, x: Var, window: usize) -> Result<Var> {
        let (c, h, w) = self.chw("avg_pool", x)?;
        if window == 0 || h < window || w < window {
            return Err(Error::invalid(
                "avg_pool",
                format!("window {window} does not fit {h}x{w}"),
            ));
        }
        let out = kernels::avg_pool(self.data(x), c, h, w, window);
        let t = self.tracked(x);
        let shape = vec![c, h / window, w / window];
        Ok(self.push(Tensor::new(shape, out)?, Op::AvgPool(x, window), t))
    }

    /// `[C, H, W] -> [C]`
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (c, h, w) = self.chw("global_avg_pool", x)?;
        let hw = (h * w) as f64;
        let out = self.data(x).chunks(h * w).map(|ch| ch.iter().sum::<f64>() / hw).collect();
        let t = self.tracked(x);
        Ok(self.push(Tensor::new(vec![c], out)?, Op::GlobalAvgPool(x), t))
    }

    /// Reverse sweep from a scalar `loss`. Gradients of `requires_grad`
    /// leaves accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let ls = self.value(loss);
        if ls.numel() != 1 {
            return Err(Error::NonScalarLoss(ls.shape().to_vec()));
        }
        if self.leaf_grads.len() < self.nodes.len() {
            self.leaf_grads.resize(self.nodes.len(), None);
        }
        if !self.tracked(loss) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            if let Op::Leaf = node.op {
                if node.requires_grad {
                    let t = Tensor::new(node.value.shape().to_vec(), g)?;
                    match &mut self.leaf_grads[i] {
                        Some(acc) => acc.add_assign(&t)?,
                        slot => *slot = Some(t),
                    }
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot => *slot = Some(g),
        }
    }

    /// Pushes the gradient `g` of node `i` to its inputs.
    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(a), self.shape(b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.tracked(a) {
                    self.accumulate(grads, a, kernels::matmul_grad_a(g, self.data(b), m, k, n));
                }
                if self.tracked(b) {
                    self.accumulate(grads, b, kernels::matmul_grad_b(g, self.data(a), m, k, n));
                }
            }
            Op::Conv2d { x, w, dims } => {
                if self.tracked(x) {
                    self.accumulate(grads, x, kernels::conv2d_grad_input(g, self.data(w), dims));
                }
                if self.tracked(w) {
                    self.accumulate(grads, w, kernels::conv2d_grad_weight(g, self.data(x), dims));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, reduce_to(g, self.value(a).numel()));
                self.accumulate(grads, b, reduce_to(g, self.value(b).numel()));
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, a, reduce_to(g, self.value(a).numel()));
                let gb: Vec<f64> = g.iter().map(|v| -v).collect();
                self.accumulate(grads, b, reduce_to(&gb, self.value(b).numel()));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(a), self.data(b));
                if self.tracked(a) {
                    self.accumulate(grads, a, reduce_to(&broadcast_mul(g, db), da.len()));
                }
                if self.tracked(b) {
                    self.accumulate(grads, b, reduce_to(&broadcast_mul(g, da), db.len()));
                }
            }
            Op::Scale(x, c) => self.accumulate(grads, x, g.iter().map(|v| v * c).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => self.accumulate(grads, x, g.to_vec()),
            Op::LeakyRelu(x, slope) => {
                let dx = self.data(x);
                let out = g.iter().zip(dx).map(|(gv, &xv)| if xv > 0.0 { *gv } else { slope * gv });
                self.accumulate(grads, x, out.collect());
            }
            Op::Tanh(x) => {
                let out = g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv));
                self.accumulate(grads, x, out.collect());
            }
            Op::Square(x) => {
                let out = g.iter().zip(self.data(x)).map(|(gv, xv)| 2.0 * xv * gv);
                self.accumulate(grads, x, out.collect());
            }
            Op::SqrtEps(x) => {
                let out = g.iter().zip(y).map(|(gv, yv)| 0.5 * gv / yv);
                self.accumulate(grads, x, out.collect());
            }
            Op::Reciprocal(x) => {
                let out = g.iter().zip(y).map(|(gv, yv)| -gv * yv * yv);
                self.accumulate(grads, x, out.collect());
            }
            Op::Sum(x) => self.accumulate(grads, x, vec![g[0]; self.value(x).numel()]),
            Op::Mean(x) => {
                let n = self.value(x).numel();
                self.accumulate(grads, x, vec![g[0] / n as f64; n]);
            }
            Op::L2Norm(x) => {
                let norm = y[0];
                let out = if norm > 0.0 {
                    self.data(x).iter().map(|v| g[0] * v / norm).collect()
                } else {
                    vec![0.0; self.value(x).numel()]
                };
                self.accumulate(grads, x, out);
            }
            Op::SumLast(x) => {
                let last = (*self.shape(x).last().unwrap_or(&1)).max(1);
                let n = self.value(x).numel();
                let mut out = Vec::with_capacity(n);
                for &gv in g {
                    out.extend(std::iter::repeat_n(gv, last));
                }
                self.accumulate(grads, x, out);
            }
            Op::Row(x, r) => {
                let cols = self.shape(x)[1];
                let mut out = vec![0.0; self.value(x).numel()];
                out[r * cols..(r + 1) * cols].copy_from_slice(g);
                self.accumulate(grads, x, out);
            }
            Op::Concat(ref xs, axis) => {
                let base = self.shape(xs[0]);
                let outer: usize = base[..axis].iter().product();
                let inner: usize = base[axis + 1..].iter().product();
                let total: usize = node.value.shape()[axis] * inner;
                let mut offset = 0;
                for &x in xs {
                    let block = self.shape(x)[axis] * inner;
                    if self.tracked(x) {
                        let mut out = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            let start = o * total + offset;
                            out.extend_from_slice(&g[start..start + block]);
                        }
                        self.accumulate(grads, x, out);
                    }
                    offset += block;
                }
            }
            Op::PixelNorm(x, eps) => {
                let d = self.data(x);
                let c = self.shape(x)[0];
                let p = d.len() / c;
                let mut out = vec![0.0; d.len()];
                for pos in 0..p {
                    let ms = (0..c).map(|ch| d[ch * p + pos].powi(2)).sum::<f64>() / c as f64;
                    let r = 1.0 / (ms + eps).sqrt();
                    let xg: f64 = (0..c).map(|ch| d[ch * p + pos] * g[ch * p + pos]).sum();
                    let k = r * r * r * xg / c as f64;
                    for ch in 0..c {
                        out[ch * p + pos] = r * g[ch * p + pos] - k * d[ch * p + pos];
                    }
                }
                self.accumulate(grads, x, out);
            }
            Op::MulAxis { x, s, axis } => {
                let n = self.shape(s)[0];
                let inner: usize = self.shape(x)[axis + 1..].iter().product();
                let (dx, ds) = (self.data(x), self.data(s));
                if self.tracked(x) {
                    self.accumulate(grads, x, axis_map(g, ds, n, inner, |gv, c| gv * c));
                }
                if self.tracked(s) {
                    let mut out = vec![0.0; n];
                    for (j, (gc, xc)) in g.chunks(inner.max(1)).zip(dx.chunks(inner.max(1))).enumerate() {
                        out[j % n] += kernels::dot(gc, xc);
                    }
                    self.accumulate(grads, s, out);
                }
            }
            Op::AddAxis { x, b, axis } => {
                let n = self.shape(b)[0];
                let inner: usize = self.shape(x)[axis + 1..].iter().product();
                self.accumulate(grads, x, g.to_vec());
                if self.tracked(b) {
                    let mut out = vec![0.0; n];
                    for (j, gc) in g.chunks(inner.max(1)).enumerate() {
                        out[j % n] += gc.iter().sum::<f64>();
                    }
                    self.accumulate(grads, b, out);
                }
            }
            Op::Resize(x) => {
                let (c, h, w) = dims3(self.shape(x));
                let s = node.value.shape();
                self.accumulate(grads, x, kernels::bilinear_resize_grad(g, c, h, w, s[1], s[2]));
            }
            Op::Upsample2(x) => {
                let (c, h, w) = dims3(self.shape(x));
                self.accumulate(grads, x, kernels::upsample_nearest2_grad(g, c, h, w));
            }
            Op::AvgPool(x, win) => {
                let (c, h, w) = dims3(self.shape(x));
                self.accumulate(grads, x, kernels::avg_pool_grad(g, c, h, w, win));
            }
            Op::GlobalAvgPool(x) => {
                let (_, h, w) = dims3(self.shape(x));
                let hw = h * w;
                let n = self.value(x).numel();
                self.accumulate(grads, x, (0..n).map(|j| g[j / hw] / hw as f64).collect());
            }
        }
    }
}

/// `out[i] = f(x[i], c[(i / inner) % n])`
fn axis_map(x: &[f64], c: &[f64], n: usize, inner: usize, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for (j, chunk) in x.chunks(inner.max(1)).enumerate() {
        let cv = c[j % n];
        out.extend(chunk.iter().map(|&v| f(v, cv)));
    }
    out
}

/// `g * v` with `v` repeated over the length of `g`.
fn broadcast_mul(g: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(g.len());
    for chunk in g.chunks(v.len().max(1)) {
        out.extend(chunk.iter().zip(v).map(|(a, b)| a * b));
    }
    out
}

fn dims3(s: &[usize]) -> (usize, usize, usize) {
    (s[0], s[1], s[2])
}

/// Sums a broadcast gradient back onto an operand holding `len` trailing values.
fn reduce_to(g: &[f64], len: usize) -> Vec<f64> {
    if g.len() == len {
        return g.to_vec();
    }
    let mut out = vec![0.0; len];
    for chunk in g.chunks(len) {
        out.iter_mut().zip(chunk).for_each(|(o, v)| *o += v);
    }
    out
}
