//! Neural primitives on plain tensors.
//!
//! These are the forward kernels (and, for the differentiable ones, their
//! adjoints) that the autodiff [`Graph`](crate::graph::Graph) dispatches to.
//! They can also be called directly when no gradient is needed.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{param_err, shape_err, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

fn conv_out_dim(input: usize, k: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return Err(shape_err!("kernel {k} larger than padded input {padded}"));
    }
    Ok((padded - k) / stride + 1)
}

struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let (h, w, cin) = x.hwc()?;
        let kd = kernel.dims();
        if kd.len() != 4 {
            return Err(shape_err!("conv kernel must be (kh, kw, cin, cout), got {:?}", kd));
        }
        let (kh, kw, kcin, cout) = (kd[0], kd[1], kd[2], kd[3]);
        if kcin != cin {
            return Err(shape_err!("conv expects {kcin} input channels, got {cin}"));
        }
        if kh == 0 || kw == 0 || cout == 0 {
            return Err(shape_err!("empty conv kernel {:?}", kd));
        }
        if stride == 0 {
            return Err(param_err!("conv stride must be >= 1"));
        }
        let oh = conv_out_dim(h, kh, stride, padding)?;
        let ow = conv_out_dim(w, kw, stride, padding)?;
        Ok(ConvGeom { h, w, cin, kh, kw, cout, oh, ow, stride, padding })
    }

    /// Input row/column for an output coordinate and tap, if inside the image.
    #[inline]
    fn src(&self, o: usize, k: usize, limit: usize) -> Option<usize> {
        let i = (o * self.stride + k) as isize - self.padding as isize;
        (i >= 0 && (i as usize) < limit).then_some(i as usize)
    }
}

/// 2-D cross-correlation of an `(h, w, cin)` image with a `(kh, kw, cin, cout)`
/// kernel and optional per-output-channel bias.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::new(x, kernel, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != g.cout {
            return Err(shape_err!("bias has {} entries for {} output channels", b.len(), g.cout));
        }
    }
    let xd = x.data();
    let wd = kernel.data();
    let mut out = vec![T::zero(); g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            if let Some(b) = bias {
                o.copy_from_slice(b.data());
            }
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xin = &xd[(iy * g.w + ix) * g.cin..][..g.cin];
                    let wbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for (ci, &xv) in xin.iter().enumerate() {
                        let wrow = &wd[wbase + ci * g.cout..][..g.cout];
                        for (acc, &wv) in o.iter_mut().zip(wrow) {
                            *acc += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::image(g.oh, g.ow, g.cout), out))
}

/// Gradients of [`conv2d`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = ConvGeom::new(x, kernel, stride, padding)?;
    if grad_out.dims() != [g.oh, g.ow, g.cout] {
        return Err(shape_err!("conv grad has shape {:?}", grad_out.dims()));
    }
    let xd = x.data();
    let wd = kernel.data();
    let god = grad_out.data();
    let mut gx = vec![T::zero(); xd.len()];
    let mut gw = vec![T::zero(); wd.len()];
    let mut gb = vec![T::zero(); g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let go = &god[(oy * g.ow + ox) * g.cout..][..g.cout];
            for (b, &v) in gb.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..g.kh {
                let Some(iy) = g.src(oy, ky, g.h) else { continue };
                for kx in 0..g.kw {
                    let Some(ix) = g.src(ox, kx, g.w) else { continue };
                    let xoff = (iy * g.w + ix) * g.cin;
                    let wbase = (ky * g.kw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let woff = wbase + ci * g.cout;
                        let wrow = &wd[woff..][..g.cout];
                        let mut acc = T::zero();
                        for (&gv, &wv) in go.iter().zip(wrow) {
                            acc += gv * wv;
                        }
                        gx[xoff + ci] += acc;
                        let xv = xd[xoff + ci];
                        for (gwv, &gv) in gw[woff..][..g.cout].iter_mut().zip(go) {
                            *gwv += xv * gv;
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape(), gx),
        Tensor::from_parts(kernel.shape(), gw),
        Tensor::from_parts(Shape::vector(g.cout), gb),
    ))
}

fn check_per_channel<T: Real>(x: &Tensor<T>, v: &Tensor<T>, what: &str) -> Result<usize> {
    let (_, _, c) = x.hwc()?;
    if v.len() != c {
        return Err(shape_err!("{what} has {} entries for {c} channels", v.len()));
    }
    Ok(c)
}

/// Parametric ReLU with one slope per channel.
pub fn prelu<T: Real>(x: &Tensor<T>, slope: &Tensor<T>) -> Result<Tensor<T>> {
    let c = check_per_channel(x, slope, "prelu slope")?;
    let s = slope.data();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v > T::zero() { v } else { s[i % c] * v })
        .collect();
    Ok(Tensor::from_parts(x.shape(), data))
}

/// Gradients of [`prelu`] with respect to input and slopes.
pub fn prelu_backward<T: Real>(x: &Tensor<T>, slope: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = check_per_channel(x, slope, "prelu slope")?;
    x.check_same_shape(grad_out)?;
    let s = slope.data();
    let mut gx = Vec::with_capacity(x.len());
    let mut gs = vec![T::zero(); c];
    for (i, (&v, &g)) in x.data().iter().zip(grad_out.data()).enumerate() {
        if v > T::zero() {
            gx.push(g);
        } else {
            gx.push(s[i % c] * g);
            gs[i % c] += v * g;
        }
    }
    Ok((Tensor::from_parts(x.shape(), gx), Tensor::from_parts(slope.shape(), gs)))
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Running statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

impl<T: Real> RunningStats<T> {
    pub fn new(channels: usize) -> Self {
        RunningStats { mean: vec![T::zero(); channels], var: vec![T::one(); channels] }
    }

    /// Exponential moving average update with an unbiased batch variance.
    pub fn update(&mut self, batch: &BatchStats<T>, momentum: T) {
        let n = T::from_f64(batch.count as f64);
        let unbias = if batch.count > 1 { n / (n - T::one()) } else { T::one() };
        for c in 0..self.mean.len() {
            self.mean[c] = (T::one() - momentum) * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = (T::one() - momentum) * self.var[c] + momentum * batch.var[c] * unbias;
        }
    }
}

/// Per-channel mean and biased variance over the spatial positions of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
    pub count: usize,
}

pub fn batch_stats<T: Real>(x: &Tensor<T>) -> Result<BatchStats<T>> {
    let (h, w, c) = x.hwc()?;
    let n = h * w;
    let mut sum = vec![0f64; c];
    for (i, v) in x.data().iter().enumerate() {
        sum[i % c] += v.as_f64();
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    let mut sq = vec![0f64; c];
    for (i, v) in x.data().iter().enumerate() {
        let d = v.as_f64() - mean[i % c];
        sq[i % c] += d * d;
    }
    Ok(BatchStats {
        mean: mean.iter().map(|&m| T::from_f64(m)).collect(),
        var: sq.iter().map(|&s| T::from_f64(s / n as f64)).collect(),
        count: n,
    })
}

/// How [`batch_norm2d`] obtains its normalization statistics.
pub enum BatchNormMode<'a, T> {
    /// Normalize with the input's own statistics and fold them into `running`.
    Training { running: &'a mut RunningStats<T>, momentum: T },
    /// Normalize with stored statistics.
    Inference { running: &'a RunningStats<T> },
}

/// Per-channel batch normalization over spatial positions followed by an affine map.
pub fn batch_norm2d<T: Real>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    shift: &Tensor<T>,
    eps: T,
    mode: BatchNormMode<'_, T>,
) -> Result<Tensor<T>> {
    let c = check_per_channel(x, scale, "batch-norm scale")?;
    check_per_channel(x, shift, "batch-norm shift")?;
    if !(eps > T::zero()) {
        return Err(param_err!("batch-norm eps must be positive, got {eps}"));
    }
    let (mean, var) = match mode {
        BatchNormMode::Training { running, momentum } => {
            let stats = batch_stats(x)?;
            running.update(&stats, momentum);
            (stats.mean, stats.var)
        }
        BatchNormMode::Inference { running } => {
            if running.mean.len() != c || running.var.len() != c {
                return Err(shape_err!("running stats do not match {c} channels"));
            }
            (running.mean.clone(), running.var.clone())
        }
    };
    Ok(affine_normalize(x, &mean, &var, scale.data(), shift.data(), eps))
}

pub(crate) fn affine_normalize<T: Real>(x: &Tensor<T>, mean: &[T], var: &[T], scale: &[T], shift: &[T], eps: T) -> Tensor<T> {
    let c = mean.len();
    let inv: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let k = i % c;
            scale[k] * (v - mean[k]) * inv[k] + shift[k]
        })
        .collect();
    Tensor::from_parts(x.shape(), data)
}

/// Channel-to-space rearrangement: `out[y*r+i, x*r+j, c] = in[y, x, c*r*r + i*r + j]`.
pub fn pixel_shuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (h, w, cin) = x.hwc()?;
    if r == 0 || cin % (r * r) != 0 {
        return Err(shape_err!("pixel shuffle: {cin} channels not divisible by {r}^2"));
    }
    let c = cin / (r * r);
    let (oh, ow) = (h * r, w * r);
    let mut out = vec![T::zero(); x.len()];
    let xd = x.data();
    for y in 0..h {
        for xx in 0..w {
            let src = &xd[(y * w + xx) * cin..][..cin];
            for ch in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        out[((y * r + i) * ow + xx * r + j) * c + ch] = src[ch * r * r + i * r + j];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::image(oh, ow, c), out))
}

/// Exact inverse of [`pixel_shuffle`].
pub fn pixel_unshuffle<T: Real>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (oh, ow, c) = x.hwc()?;
    if r == 0 || oh % r != 0 || ow % r != 0 {
        return Err(shape_err!("pixel unshuffle: {oh}x{ow} not divisible by {r}"));
    }
    let (h, w, cin) = (oh / r, ow / r, c * r * r);
    let mut out = vec![T::zero(); x.len()];
    let xd = x.data();
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                for i in 0..r {
                    for j in 0..r {
                        out[(y * w + xx) * cin + ch * r * r + i * r + j] = xd[((y * r + i) * ow + xx * r + j) * c + ch];
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::image(h, w, cin), out))
}

/// Interpolation taps `(lo, hi, weight_hi)` for corner-aligned resampling.
fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    (0..dst)
        .map(|i| {
            let pos = if dst == 1 { 0.0 } else { (i * (src - 1)) as f64 / (dst - 1) as f64 };
            let lo = (libm::floor(pos) as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

/// Bilinear resize with corner-aligned sampling; channels are preserved.
pub fn resize_bilinear<T: Real>(x: &Tensor<T>, target_h: usize, target_w: usize) -> Result<Tensor<T>> {
    let (h, w, c) = x.hwc()?;
    if target_h == 0 || target_w == 0 || h == 0 || w == 0 {
        return Err(shape_err!("resize {h}x{w} -> {target_h}x{target_w}"));
    }
    let rows = bilinear_taps(h, target_h);
    let cols = bilinear_taps(w, target_w);
    let xd = x.data();
    let mut out = Vec::with_capacity(target_h * target_w * c);
    for &(y0, y1, fy) in &rows {
        let (wy1, wy0) = (T::from_f64(fy), T::from_f64(1.0 - fy));
        for &(x0, x1, fx) in &cols {
            let (wx1, wx0) = (T::from_f64(fx), T::from_f64(1.0 - fx));
            for ch in 0..c {
                let v00 = xd[(y0 * w + x0) * c + ch];
                let v01 = xd[(y0 * w + x1) * c + ch];
                let v10 = xd[(y1 * w + x0) * c + ch];
                let v11 = xd[(y1 * w + x1) * c + ch];
                out.push(wy0 * (wx0 * v00 + wx1 * v01) + wy1 * (wx0 * v10 + wx1 * v11));
            }
        }
    }
    Ok(Tensor::from_parts(Shape::image(target_h, target_w, c), out))
}

/// Adjoint of [`resize_bilinear`]: maps an output gradient back to the source grid.
pub fn resize_bilinear_backward<T: Real>(src_shape: Shape, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = src_shape.hwc()?;
    let (th, tw, gc) = grad_out.hwc()?;
    if gc != c {
        return Err(shape_err!("resize grad channels {gc} != {c}"));
    }
    let rows = bilinear_taps(h, th);
    let cols = bilinear_taps(w, tw);
    let god = grad_out.data();
    let mut gx = vec![T::zero(); h * w * c];
    for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
        let (wy1, wy0) = (T::from_f64(fy), T::from_f64(1.0 - fy));
        for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
            let (wx1, wx0) = (T::from_f64(fx), T::from_f64(1.0 - fx));
            for ch in 0..c {
                let g = god[(oy * tw + ox) * c + ch];
                gx[(y0 * w + x0) * c + ch] += wy0 * wx0 * g;
                gx[(y0 * w + x1) * c + ch] += wy0 * wx1 * g;
                gx[(y1 * w + x0) * c + ch] += wy1 * wx0 * g;
                gx[(y1 * w + x1) * c + ch] += wy1 * wx1 * g;
            }
        }
    }
    Ok(Tensor::from_parts(src_shape, gx))
}

/// Normalized 1-D Gaussian taps of the given odd length.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let mut taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            libm::exp(-d * d / (2.0 * sigma * sigma))
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// Normalized `size x size` Gaussian window as a `(size, size, 1)` tensor.
pub fn gaussian_window<T: Real>(size: usize, sigma: f64) -> Result<Tensor<T>> {
    if size == 0 || size % 2 == 0 {
        return Err(param_err!("gaussian window size must be odd, got {size}"));
    }
    if !(sigma > 0.0) {
        return Err(param_err!("gaussian sigma must be positive, got {sigma}"));
    }
    let taps = gaussian_taps(size, sigma);
    Ok(Tensor::from_fn(size, size, 1, |y, x, _| T::from_f64(taps[y] * taps[x])))
}

/// Per-channel "valid" correlation of an image with a single-channel window.
pub fn filter_valid<T: Real>(x: &Tensor<T>, window: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = x.hwc()?;
    let (kh, kw, kc) = window.hwc()?;
    if kc != 1 {
        return Err(shape_err!("filter window must have one channel"));
    }
    if h < kh || w < kw {
        return Err(shape_err!("image {h}x{w} smaller than window {kh}x{kw}"));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let xd = x.data();
    let kd = window.data();
    let mut out = vec![T::zero(); oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let o = &mut out[(oy * ow + ox) * c..][..c];
            for i in 0..kh {
                for j in 0..kw {
                    let k = kd[i * kw + j];
                    let src = &xd[((oy + i) * w + ox + j) * c..][..c];
                    for (acc, &v) in o.iter_mut().zip(src) {
                        *acc += k * v;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(Shape::image(oh, ow, c), out))
}

/// Adjoint of [`filter_valid`] with respect to the image.
pub fn filter_valid_backward<T: Real>(src_shape: Shape, window: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w, c) = src_shape.hwc()?;
    let (kh, kw, _) = window.hwc()?;
    let (oh, ow, _) = grad_out.hwc()?;
    let god = grad_out.data();
    let kd = window.data();
    let mut gx = vec![T::zero(); h * w * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let g = &god[(oy * ow + ox) * c..][..c];
            for i in 0..kh {
                for j in 0..kw {
                    let k = kd[i * kw + j];
                    let dst = &mut gx[((oy + i) * w + ox + j) * c..][..c];
                    for (d, &gv) in dst.iter_mut().zip(g) {
                        *d += k * gv;
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(src_shape, gx))
}
