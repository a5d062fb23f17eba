//! Raw forward kernels and their adjoints on flat row-major buffers.
//!
//! Images are laid out channel-major: `[C, H, W]`.

/// `out[m,n] = a[m,k] * b[k,n]`
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `da = dout * b^T`
pub fn matmul_grad_a(dout: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut da = vec![0.0; m * k];
    for i in 0..m {
        let drow = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            da[i * k + p] = dot(drow, &b[p * n..(p + 1) * n]);
        }
    }
    da
}

/// `db = a^T * dout`
pub fn matmul_grad_b(dout: &[f64], a: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut db = vec![0.0; k * n];
    for i in 0..m {
        let drow = &dout[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &d) in db[p * n..(p + 1) * n].iter_mut().zip(drow) {
                *o += av * d;
            }
        }
    }
    db
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Geometry of a stride-1 "same"-padded convolution.
#[derive(Debug, Clone, Copy)]
pub struct ConvDims {
    pub cin: usize,
    pub cout: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
}

impl ConvDims {
    fn pad(&self) -> isize {
        (self.k / 2) as isize
    }

    /// Valid output range along one axis for kernel offset `d`.
    fn span(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d).min(len as isize).max(0) as usize;
        (lo, hi.max(lo))
    }
}

/// Patch matrix `[Cin * k * k, H * W]`: row `(ci, ky, kx)` holds the input
/// shifted by the kernel offset, zero outside the image.
fn im2col(x: &[f64], d: ConvDims) -> Vec<f64> {
    let hw = d.h * d.w;
    let pad = d.pad();
    let mut cols = vec![0.0; d.cin * d.k * d.k * hw];
    for ci in 0..d.cin {
        let xc = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..d.k {
            let dy = ky as isize - pad;
            let (y0, y1) = ConvDims::span(d.h, dy);
            for kx in 0..d.k {
                let dx = kx as isize - pad;
                let (x0, x1) = ConvDims::span(d.w, dx);
                let row = &mut cols[((ci * d.k + ky) * d.k + kx) * hw..][..hw];
                for oy in y0..y1 {
                    let iy = (oy as isize + dy) as usize;
                    let src = &xc[iy * d.w + (x0 as isize + dx) as usize..][..x1 - x0];
                    row[oy * d.w + x0..oy * d.w + x1].copy_from_slice(src);
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch rows back onto the image.
fn col2im(cols: &[f64], d: ConvDims) -> Vec<f64> {
    let hw = d.h * d.w;
    let pad = d.pad();
    let mut x = vec![0.0; d.cin * hw];
    for ci in 0..d.cin {
        let xc = &mut x[ci * hw..(ci + 1) * hw];
        for ky in 0..d.k {
            let dy = ky as isize - pad;
            let (y0, y1) = ConvDims::span(d.h, dy);
            for kx in 0..d.k {
                let dx = kx as isize - pad;
                let (x0, x1) = ConvDims::span(d.w, dx);
                let row = &cols[((ci * d.k + ky) * d.k + kx) * hw..][..hw];
                for oy in y0..y1 {
                    let iy = (oy as isize + dy) as usize;
                    let start = iy * d.w + (x0 as isize + dx) as usize;
                    let dst = &mut xc[start..start + (x1 - x0)];
                    for (o, &v) in dst.iter_mut().zip(&row[oy * d.w + x0..oy * d.w + x1]) {
                        *o += v;
                    }
                }
            }
        }
    }
    x
}

fn patches(x: &[f64], d: ConvDims) -> std::borrow::Cow<'_, [f64]> {
    if d.k == 1 {
        std::borrow::Cow::Borrowed(x)
    } else {
        std::borrow::Cow::Owned(im2col(x, d))
    }
}

pub fn conv2d(x: &[f64], weight: &[f64], d: ConvDims) -> Vec<f64> {
    let kk = d.cin * d.k * d.k;
    matmul(weight, &patches(x, d), d.cout, kk, d.h * d.w)
}

pub fn conv2d_grad_input(dout: &[f64], weight: &[f64], d: ConvDims) -> Vec<f64> {
    let kk = d.cin * d.k * d.k;
    let dcols = matmul_grad_b(dout, weight, d.cout, kk, d.h * d.w);
    if d.k == 1 {
        dcols
    } else {
        col2im(&dcols, d)
    }
}

pub fn conv2d_grad_weight(dout: &[f64], x: &[f64], d: ConvDims) -> Vec<f64> {
    let kk = d.cin * d.k * d.k;
    matmul_grad_a(dout, &patches(x, d), d.cout, kk, d.h * d.w)
}

/// Source taps for one output coordinate of a half-pixel bilinear resize.
#[derive(Debug, Clone, Copy)]
struct Tap {
    i0: usize,
    i1: usize,
    frac: f64,
}

fn taps(in_len: usize, out_len: usize) -> Vec<Tap> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            Tap {
                i0,
                i1,
                frac: src - i0 as f64,
            }
        })
        .collect()
}

/// Bilinear resize with half-pixel centers and edge clamping
/// (the `align_corners = false` convention).
pub fn bilinear_resize(x: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for (oy, a) in ty.iter().enumerate() {
            let r0 = &src[a.i0 * w..(a.i0 + 1) * w];
            let r1 = &src[a.i1 * w..(a.i1 + 1) * w];
            for (ox, b) in tx.iter().enumerate() {
                let top = r0[b.i0] * (1.0 - b.frac) + r0[b.i1] * b.frac;
                let bottom = r1[b.i0] * (1.0 - b.frac) + r1[b.i1] * b.frac;
                dst[oy * ow + ox] = top * (1.0 - a.frac) + bottom * a.frac;
            }
        }
    }
    out
}

pub fn bilinear_resize_grad(
    dout: &[f64],
    c: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let ty = taps(h, oh);
    let tx = taps(w, ow);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        let g = &dout[ch * oh * ow..(ch + 1) * oh * ow];
        let d = &mut dx[ch * h * w..(ch + 1) * h * w];
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let v = g[oy * ow + ox];
                d[a.i0 * w + b.i0] += v * (1.0 - a.frac) * (1.0 - b.frac);
                d[a.i0 * w + b.i1] += v * (1.0 - a.frac) * b.frac;
                d[a.i1 * w + b.i0] += v * a.frac * (1.0 - b.frac);
                d[a.i1 * w + b.i1] += v * a.frac * b.frac;
            }
        }
    }
    dx
}

pub fn upsample_nearest2(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = x[(ch * h + oy / 2) * w + ox / 2];
            }
        }
    }
    out
}

pub fn upsample_nearest2_grad(dout: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                dx[(ch * h + oy / 2) * w + ox / 2] += dout[(ch * oh + oy) * ow + ox];
            }
        }
    }
    dx
}

/// Non-overlapping `win x win` average pooling; trailing rows/columns that do
/// not fill a window are dropped.
pub fn avg_pool(x: &[f64], c: usize, h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h / win, w / win);
    let norm = 1.0 / (win * win) as f64;
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..win {
                    let row = (ch * h + oy * win + dy) * w + ox * win;
                    acc += x[row..row + win].iter().sum::<f64>();
                }
                out[(ch * oh + oy) * ow + ox] = acc * norm;
            }
        }
    }
    out
}

pub fn avg_pool_grad(dout: &[f64], c: usize, h: usize, w: usize, win: usize) -> Vec<f64> {
    let (oh, ow) = (h / win, w / win);
    let norm = 1.0 / (win * win) as f64;
    let mut dx = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = dout[(ch * oh + oy) * ow + ox] * norm;
                for dy in 0..win {
                    let row = (ch * h + oy * win + dy) * w + ox * win;
                    for v in &mut dx[row..row + win] {
                        *v += g;
                    }
                }
            }
        }
    }
    dx
}
