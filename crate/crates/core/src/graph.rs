//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Graph`] is an append-only arena of [`Node`]s. Every operation pushes a
//! node holding its value, the primitive that produced it and references to
//! its inputs, so node indices are already a topological order and
//! [`Graph::backward`] is a single reverse sweep.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{param_err, shape_err, Error, Result};
use crate::ops::{self, BatchStats};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive that produced a node.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    Conv2d { stride: usize, padding: usize },
    Prelu,
    Relu,
    BatchNormTrain { xhat: Tensor<T>, inv_std: Vec<T> },
    BatchNormInfer { mean: Vec<T>, inv_std: Vec<T> },
    PixelShuffle { r: usize },
    ResizeBilinear,
    Add,
    Sub,
    Mul,
    Div,
    Scale(T),
    AddScalar(T),
    Square,
    Abs,
    ConcatChannels,
    ConcatRows,
    Crop { top: usize, left: usize },
    MeanStack,
    ChannelMean,
    AddChannelBias,
    MeanAll,
    FilterValid { window: Tensor<T> },
    SpectralAngle,
    MinOf { arg: usize },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Conv2d { .. } => "conv2d",
            Op::Prelu => "prelu",
            Op::Relu => "relu",
            Op::BatchNormTrain { .. } => "batch_norm_train",
            Op::BatchNormInfer { .. } => "batch_norm_infer",
            Op::PixelShuffle { .. } => "pixel_shuffle",
            Op::ResizeBilinear => "resize_bilinear",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::Div => "div",
            Op::Scale(_) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Square => "square",
            Op::Abs => "abs",
            Op::ConcatChannels => "concat_channels",
            Op::ConcatRows => "concat_rows",
            Op::Crop { .. } => "crop",
            Op::MeanStack => "mean_stack",
            Op::ChannelMean => "channel_mean",
            Op::AddChannelBias => "add_channel_bias",
            Op::MeanAll => "mean_all",
            Op::FilterValid { .. } => "filter_valid",
            Op::SpectralAngle => "spectral_angle",
            Op::MinOf { .. } => "min_of",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub parents: Vec<Var>,
    /// Gradient accumulated by [`Graph::backward`] calls since the last reset.
    pub grad: Option<Tensor<T>>,
    pub requires_grad: bool,
    /// Index into a [`ParamStore`](crate::param::ParamStore) for parameter leaves.
    pub param: Option<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, v: Var) -> &Node<T> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false, None)
    }

    /// Leaf whose gradient is tracked.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true, None)
    }

    /// Leaf bound to parameter `id` of a parameter store.
    pub fn param(&mut self, id: usize, value: Tensor<T>) -> Var {
        self.leaf(value, true, Some(id))
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool, param: Option<usize>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, parents: Vec::new(), grad: None, requires_grad, param });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: Vec<Var>) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, parents, grad: None, requires_grad, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(&mut self, x: Var, kernel: Var, bias: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let value = ops::conv2d(self.value(x), self.value(kernel), bias.map(|b| self.value(b)), stride, padding)?;
        let mut parents = vec![x, kernel];
        parents.extend(bias);
        Ok(self.push(value, Op::Conv2d { stride, padding }, parents))
    }

    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let value = ops::prelu(self.value(x), self.value(slope))?;
        Ok(self.push(value, Op::Prelu, vec![x, slope]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = ops::relu(self.value(x));
        self.push(value, Op::Relu, vec![x])
    }

    /// Batch norm using the input's own per-channel statistics.
    ///
    /// Returns the statistics so the caller can fold them into running averages.
    pub fn batch_norm_train(&mut self, x: Var, scale: Var, shift: Var, eps: T) -> Result<(Var, BatchStats<T>)> {
        if !(eps > T::zero()) {
            return Err(param_err!("batch-norm eps must be positive, got {eps}"));
        }
        let xv = self.value(x);
        let (_, _, c) = xv.hwc()?;
        if self.value(scale).len() != c || self.value(shift).len() != c {
            return Err(shape_err!("batch-norm affine parameters do not match {c} channels"));
        }
        let stats = ops::batch_stats(xv)?;
        let inv_std: Vec<T> = stats.var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let ones = vec![T::one(); c];
        let zeros = vec![T::zero(); c];
        let xhat = ops::affine_normalize(xv, &stats.mean, &stats.var, &ones, &zeros, eps);
        let (sd, bd) = (self.value(scale).data(), self.value(shift).data());
        let data = xhat.data().iter().enumerate().map(|(i, &v)| sd[i % c] * v + bd[i % c]).collect();
        let value = Tensor::from_parts(xv.shape(), data);
        let var = self.push(value, Op::BatchNormTrain { xhat, inv_std }, vec![x, scale, shift]);
        Ok((var, stats))
    }

    /// Batch norm with fixed statistics.
    pub fn batch_norm_infer(&mut self, x: Var, scale: Var, shift: Var, mean: &[T], var: &[T], eps: T) -> Result<Var> {
        if !(eps > T::zero()) {
            return Err(param_err!("batch-norm eps must be positive, got {eps}"));
        }
        let xv = self.value(x);
        let (_, _, c) = xv.hwc()?;
        if self.value(scale).len() != c || self.value(shift).len() != c || mean.len() != c || var.len() != c {
            return Err(shape_err!("batch-norm parameters do not match {c} channels"));
        }
        let value = ops::affine_normalize(xv, mean, var, self.value(scale).data(), self.value(shift).data(), eps);
        let inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        Ok(self.push(value, Op::BatchNormInfer { mean: mean.to_vec(), inv_std }, vec![x, scale, shift]))
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let value = ops::pixel_shuffle(self.value(x), r)?;
        Ok(self.push(value, Op::PixelShuffle { r }, vec![x]))
    }

    pub fn resize_bilinear(&mut self, x: Var, h: usize, w: usize) -> Result<Var> {
        let value = ops::resize_bilinear(self.value(x), h, w)?;
        Ok(self.push(value, Op::ResizeBilinear, vec![x]))
    }

    fn binary(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), f)?;
        Ok(self.push(value, op, vec![a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Div, |x, y| x / y)
    }

    pub fn scale(&mut self, x: Var, k: T) -> Var {
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::Scale(k), vec![x])
    }

    pub fn add_scalar(&mut self, x: Var, k: T) -> Var {
        let value = self.value(x).map(|v| v + k);
        self.push(value, Op::AddScalar(k), vec![x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square, vec![x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.abs());
        self.push(value, Op::Abs, vec![x])
    }

    /// Concatenates images along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Empty("concat_channels".to_string()))?;
        let (h, w, _) = self.value(first).hwc()?;
        let mut widths = Vec::with_capacity(xs.len());
        for &x in xs {
            let (xh, xw, xc) = self.value(x).hwc()?;
            if (xh, xw) != (h, w) {
                return Err(shape_err!("concat_channels: {xh}x{xw} vs {h}x{w}"));
            }
            widths.push(xc);
        }
        let c: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(h * w * c);
        for p in 0..h * w {
            for (&x, &xc) in xs.iter().zip(&widths) {
                data.extend_from_slice(&self.value(x).data()[p * xc..][..xc]);
            }
        }
        Ok(self.push(Tensor::from_parts(Shape::image(h, w, c), data), Op::ConcatChannels, xs.to_vec()))
    }

    /// Stacks images vertically (used to pool batch statistics).
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Empty("concat_rows".to_string()))?;
        let (_, w, c) = self.value(first).hwc()?;
        let mut h = 0;
        let mut data = Vec::new();
        for &x in xs {
            let (xh, xw, xc) = self.value(x).hwc()?;
            if (xw, xc) != (w, c) {
                return Err(shape_err!("concat_rows: width/channels {xw}/{xc} vs {w}/{c}"));
            }
            h += xh;
            data.extend_from_slice(self.value(x).data());
        }
        Ok(self.push(Tensor::from_parts(Shape::image(h, w, c), data), Op::ConcatRows, xs.to_vec()))
    }

    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let value = self.value(x).crop(top, left, h, w)?;
        Ok(self.push(value, Op::Crop { top, left }, vec![x]))
    }

    /// Element-wise mean of equally shaped tensors.
    ///
    /// Each element's values are summed in sorted order, so the result is
    /// bitwise independent of the order of `xs`.
    pub fn mean_stack(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or_else(|| Error::Empty("mean_stack".to_string()))?;
        let shape = self.value(first).shape();
        for &x in xs {
            if self.value(x).shape() != shape {
                return Err(shape_err!("mean_stack: {:?} vs {:?}", self.value(x).shape(), shape));
            }
        }
        let n = T::from_f64(xs.len() as f64);
        let mut column = Vec::with_capacity(xs.len());
        let data = (0..shape.numel())
            .map(|i| {
                column.clear();
                column.extend(xs.iter().map(|&x| self.value(x).data()[i]));
                column.sort_by(|a: &T, b| a.total_order(b));
                column.iter().copied().fold(T::zero(), |acc, v| acc + v) / n
            })
            .collect();
        Ok(self.push(Tensor::from_parts(shape, data), Op::MeanStack, xs.to_vec()))
    }

    /// Spatial mean per channel, shape `(1, 1, c)`.
    pub fn channel_mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (h, w, c) = xv.hwc()?;
        let mut sums = vec![T::zero(); c];
        for (i, &v) in xv.data().iter().enumerate() {
            sums[i % c] += v;
        }
        let n = T::from_f64((h * w) as f64);
        let data = sums.into_iter().map(|s| s / n).collect();
        Ok(self.push(Tensor::from_parts(Shape::image(1, 1, c), data), Op::ChannelMean, vec![x]))
    }

    /// Adds a `(1, 1, c)` per-channel offset to every pixel.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, _, c) = self.value(x).hwc()?;
        let b = self.value(bias);
        if b.len() != c {
            return Err(shape_err!("channel bias has {} entries for {c} channels", b.len()));
        }
        let bd = b.data();
        let data = self.value(x).data().iter().enumerate().map(|(i, &v)| v + bd[i % c]).collect();
        let value = Tensor::from_parts(self.value(x).shape(), data);
        Ok(self.push(value, Op::AddChannelBias, vec![x, bias]))
    }

    /// Mean of all elements as a scalar.
    pub fn mean_all(&mut self, x: Var) -> Var {
        let m = self.value(x).mean();
        self.push(Tensor::scalar(m), Op::MeanAll, vec![x])
    }

    /// Per-channel valid correlation with a fixed window.
    pub fn filter_valid(&mut self, x: Var, window: &Tensor<T>) -> Result<Var> {
        let value = ops::filter_valid(self.value(x), window)?;
        Ok(self.push(value, Op::FilterValid { window: window.clone() }, vec![x]))
    }

    /// Per-pixel angle (radians) between the spectra of `a` and `b`, shape `(h, w, 1)`.
    ///
    /// Pixels where either spectrum is the zero vector get angle 0 and no gradient.
    pub fn spectral_angle(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same_shape(bv)?;
        let (h, w, c) = av.hwc()?;
        let data = (0..h * w)
            .map(|p| {
                let (pa, pb) = (&av.data()[p * c..][..c], &bv.data()[p * c..][..c]);
                T::from_f64(pixel_angle(pa, pb).0)
            })
            .collect();
        Ok(self.push(Tensor::from_parts(Shape::image(h, w, 1), data), Op::SpectralAngle, vec![a, b]))
    }

    /// Minimum of scalar nodes; the gradient flows to the first minimal one only.
    pub fn min_of(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("min_of".to_string()));
        }
        let mut arg = 0;
        let mut best = self.value(xs[0]).item()?;
        for (i, &x) in xs.iter().enumerate().skip(1) {
            let v = self.value(x).item()?;
            if v.total_order(&best) == Ordering::Less {
                best = v;
                arg = i;
            }
        }
        Ok(self.push(Tensor::scalar(best), Op::MinOf { arg }, xs.to_vec()))
    }

    /// Back-propagates from a scalar node, accumulating into every node's `grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(alloc::format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad || node.parents.is_empty() {
                continue;
            }
            let contributions = self.local_grads(node, g)?;
            for (p, cg) in node.parents.iter().zip(contributions) {
                let Some(cg) = cg else { continue };
                if !self.nodes[p.0].requires_grad {
                    continue;
                }
                match &mut lower[p.0] {
                    Some(acc) => acc.add_assign(&cg)?,
                    slot => *slot = Some(cg),
                }
            }
        }
        for (node, g) in self.nodes.iter_mut().zip(grads) {
            let Some(g) = g else { continue };
            if !node.requires_grad {
                continue;
            }
            match &mut node.grad {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Clears all accumulated gradients.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    /// `(parameter id, gradient)` for every parameter leaf that received one.
    pub fn param_grads(&self) -> impl Iterator<Item = (usize, &Tensor<T>)> {
        self.nodes.iter().filter_map(|n| Some((n.param?, n.grad.as_ref()?)))
    }

    fn local_grads(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<Option<Tensor<T>>>> {
        let val = |k: usize| &self.nodes[node.parents[k].0].value;
        let needs = |k: usize| self.nodes[node.parents[k].0].requires_grad;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::Conv2d { stride, padding } => {
                let (gx, gw, gb) = ops::conv2d_backward(val(0), val(1), g, *stride, *padding)?;
                let mut v = vec![Some(gx), Some(gw)];
                if node.parents.len() == 3 {
                    v.push(Some(gb));
                }
                v
            }
            Op::Prelu => {
                let (gx, gs) = ops::prelu_backward(val(0), val(1), g)?;
                vec![Some(gx), Some(gs)]
            }
            Op::Relu => {
                let x = val(0);
                vec![Some(x.zip_map(g, |v, gv| if v > T::zero() { gv } else { T::zero() })?)]
            }
            Op::BatchNormTrain { xhat, inv_std } => batch_norm_train_grads(xhat, inv_std, val(1), g)?,
            Op::BatchNormInfer { mean, inv_std } => {
                let (x, scale) = (val(0), val(1));
                let c = mean.len();
                let sd = scale.data();
                let mut gs = vec![T::zero(); c];
                let mut gb = vec![T::zero(); c];
                let mut gx = Vec::with_capacity(x.len());
                for (i, (&xv, &gv)) in x.data().iter().zip(g.data()).enumerate() {
                    let k = i % c;
                    gx.push(sd[k] * inv_std[k] * gv);
                    gs[k] += gv * (xv - mean[k]) * inv_std[k];
                    gb[k] += gv;
                }
                vec![
                    Some(Tensor::from_parts(x.shape(), gx)),
                    Some(Tensor::from_parts(scale.shape(), gs)),
                    Some(Tensor::from_parts(val(2).shape(), gb)),
                ]
            }
            Op::PixelShuffle { r } => vec![Some(ops::pixel_unshuffle(g, *r)?)],
            Op::ResizeBilinear => vec![Some(ops::resize_bilinear_backward(val(0).shape(), g)?)],
            Op::Add => vec![Some(g.clone()), Some(g.clone())],
            Op::Sub => vec![Some(g.clone()), Some(g.map(|v| -v))],
            Op::Mul => vec![
                needs(0).then(|| g.zip_map(val(1), |gv, b| gv * b)).transpose()?,
                needs(1).then(|| g.zip_map(val(0), |gv, a| gv * a)).transpose()?,
            ],
            Op::Div => {
                let (a, b) = (val(0), val(1));
                let ga = needs(0).then(|| g.zip_map(b, |gv, bv| gv / bv)).transpose()?;
                let gb = if needs(1) {
                    let data = g
                        .data()
                        .iter()
                        .zip(a.data().iter().zip(b.data()))
                        .map(|(&gv, (&av, &bv))| -gv * av / (bv * bv))
                        .collect();
                    Some(Tensor::from_parts(b.shape(), data))
                } else {
                    None
                };
                vec![ga, gb]
            }
            Op::Scale(k) => vec![Some(g.map(|v| v * *k))],
            Op::AddScalar(_) => vec![Some(g.clone())],
            Op::Square => vec![Some(g.zip_map(val(0), |gv, x| gv * (x + x))?)],
            Op::Abs => vec![Some(g.zip_map(val(0), |gv, x| {
                if x > T::zero() {
                    gv
                } else if x < T::zero() {
                    -gv
                } else {
                    T::zero()
                }
            })?)],
            Op::ConcatChannels => {
                let (h, w, c) = g.hwc()?;
                let mut offset = 0;
                let mut out = Vec::with_capacity(node.parents.len());
                for k in 0..node.parents.len() {
                    let pc = val(k).hwc()?.2;
                    let mut data = Vec::with_capacity(h * w * pc);
                    for p in 0..h * w {
                        data.extend_from_slice(&g.data()[p * c + offset..][..pc]);
                    }
                    offset += pc;
                    out.push(Some(Tensor::from_parts(val(k).shape(), data)));
                }
                out
            }
            Op::ConcatRows => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(node.parents.len());
                for k in 0..node.parents.len() {
                    let n = val(k).len();
                    out.push(Some(Tensor::from_parts(val(k).shape(), g.data()[offset..][..n].to_vec())));
                    offset += n;
                }
                out
            }
            Op::Crop { top, left } => {
                let x = val(0);
                let (_, w, c) = x.hwc()?;
                let (gh, gw, _) = g.hwc()?;
                let mut gx = vec![T::zero(); x.len()];
                for y in 0..gh {
                    let dst = ((top + y) * w + left) * c;
                    gx[dst..dst + gw * c].copy_from_slice(&g.data()[y * gw * c..][..gw * c]);
                }
                vec![Some(Tensor::from_parts(x.shape(), gx))]
            }
            Op::MeanStack => {
                let share = g.map(|v| v / T::from_f64(node.parents.len() as f64));
                vec![Some(share); node.parents.len()]
            }
            Op::ChannelMean => {
                let x = val(0);
                let (h, w, c) = x.hwc()?;
                let n = T::from_f64((h * w) as f64);
                let data = (0..x.len()).map(|i| g.data()[i % c] / n).collect();
                vec![Some(Tensor::from_parts(x.shape(), data))]
            }
            Op::AddChannelBias => {
                let (_, _, c) = val(0).hwc()?;
                let mut gb = vec![T::zero(); c];
                for (i, &v) in g.data().iter().enumerate() {
                    gb[i % c] += v;
                }
                vec![Some(g.clone()), Some(Tensor::from_parts(val(1).shape(), gb))]
            }
            Op::MeanAll => {
                let x = val(0);
                let share = g.data()[0] / T::from_f64(x.len() as f64);
                vec![Some(Tensor::full(x.shape(), share))]
            }
            Op::FilterValid { window } => vec![Some(ops::filter_valid_backward(val(0).shape(), window, g)?)],
            Op::SpectralAngle => {
                let (a, b) = (val(0), val(1));
                let (h, w, c) = a.hwc()?;
                let mut ga = vec![T::zero(); a.len()];
                let mut gb = vec![T::zero(); b.len()];
                for p in 0..h * w {
                    let (pa, pb) = (&a.data()[p * c..][..c], &b.data()[p * c..][..c]);
                    let (_, dcos) = pixel_angle(pa, pb);
                    let Some((na, nb, cos, dtheta)) = dcos else { continue };
                    let gp = g.data()[p].as_f64() * dtheta;
                    for k in 0..c {
                        let (ak, bk) = (pa[k].as_f64(), pb[k].as_f64());
                        ga[p * c + k] = T::from_f64(gp * (bk / (na * nb) - cos * ak / (na * na)));
                        gb[p * c + k] = T::from_f64(gp * (ak / (na * nb) - cos * bk / (nb * nb)));
                    }
                }
                vec![Some(Tensor::from_parts(a.shape(), ga)), Some(Tensor::from_parts(b.shape(), gb))]
            }
            Op::MinOf { arg } => (0..node.parents.len())
                .map(|k| (k == *arg).then(|| g.clone()))
                .collect(),
        };
        Ok(out)
    }
}

/// Angle between two spectra, plus `(|a|, |b|, cos, d angle / d cos)` when differentiable.
fn pixel_angle<T: Real>(a: &[T], b: &[T]) -> (f64, Option<(f64, f64, f64, f64)>) {
    let (mut dot, mut saa, mut sbb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        saa += x * x;
        sbb += y * y;
    }
    if saa == 0.0 || sbb == 0.0 {
        return (0.0, None);
    }
    let (na, nb) = (libm::sqrt(saa), libm::sqrt(sbb));
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
    let angle = crate::metrics::pixel_spectral_angle(a, b).unwrap_or(0.0);
    let s = 1.0 - cos * cos;
    if s <= 1e-12 {
        return (angle, None);
    }
    (angle, Some((na, nb, cos, -1.0 / libm::sqrt(s))))
}

fn batch_norm_train_grads<T: Real>(
    xhat: &Tensor<T>,
    inv_std: &[T],
    scale: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<Vec<Option<Tensor<T>>>> {
    let c = inv_std.len();
    let n = T::from_f64((xhat.len() / c) as f64);
    let mut sum_g = vec![T::zero(); c];
    let mut sum_gx = vec![T::zero(); c];
    for (i, (&gv, &xh)) in g.data().iter().zip(xhat.data()).enumerate() {
        sum_g[i % c] += gv;
        sum_gx[i % c] += gv * xh;
    }
    let sd = scale.data();
    let gx = g
        .data()
        .iter()
        .zip(xhat.data())
        .enumerate()
        .map(|(i, (&gv, &xh))| {
            let k = i % c;
            sd[k] * inv_std[k] / n * (n * gv - sum_g[k] - xh * sum_gx[k])
        })
        .collect();
    Ok(vec![
        Some(Tensor::from_parts(xhat.shape(), gx)),
        Some(Tensor::from_parts(scale.shape(), sum_gx)),
        Some(Tensor::from_parts(scale.shape(), sum_g)),
    ])
}
