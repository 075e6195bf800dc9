//! Training supervision.
//!
//! The composite loss is a weighted sum of MAE, MSE, `1 - SSIM` and the mean
//! spectral angle in radians. Two optional adjustments make it tolerant to
//! acquisition differences between prediction and ground truth: per-channel
//! brightness compensation, and a search over sub-pixel shifts of the ground
//! truth (Lanczos resampled) that keeps the smallest loss.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::metrics::SsimParams;
use crate::ops;
use crate::real::Real;
use crate::tensor::Tensor;

/// Loss term order used by weight and flag arrays.
pub const TERM_NAMES: [&str; 4] = ["mae", "mse", "ssim", "sam"];

/// Extent of the ground-truth shift search.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSearchSpec {
    /// Largest absolute shift per axis, in pixels.
    pub p_x: usize,
    /// Spacing of candidate shifts, in pixels.
    pub step: f64,
    /// Lanczos lobe count.
    pub a: usize,
}

impl Default for ShiftSearchSpec {
    fn default() -> Self {
        ShiftSearchSpec { p_x: 2, step: 1.0, a: 3 }
    }
}

impl ShiftSearchSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !self.step.is_finite() {
            return Err(param_err!("shift step must be positive, got {}", self.step));
        }
        if self.a == 0 {
            return Err(param_err!("lanczos lobe count must be >= 1"));
        }
        let n = 2.0 * self.p_x as f64 / self.step;
        if (n - libm::round(n)).abs() > 1e-9 {
            return Err(param_err!("2 * p_x / step = {n} is not an integer"));
        }
        Ok(())
    }

    /// Candidate offsets `-p_x, -p_x + step, ..., p_x` along one axis.
    pub fn offsets(&self) -> Result<Vec<f64>> {
        self.validate()?;
        let n = libm::round(2.0 * self.p_x as f64 / self.step) as usize;
        Ok((0..=n).map(|k| -(self.p_x as f64) + k as f64 * self.step).collect())
    }

    /// Border removed from each side of both images, `a + p_x`.
    pub fn margin(&self) -> usize {
        self.a + self.p_x
    }
}

/// Windowed sinc `sinc(x) * sinc(x / a)` for `|x| < a`, zero elsewhere.
pub fn lanczos(x: f64, a: usize) -> f64 {
    let a = a as f64;
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= a || x == libm::round(x) {
        return 0.0;
    }
    let px = PI * x;
    a * libm::sin(px) * libm::sin(px / a) / (px * px)
}

/// 1-D kernel shifting by `d`: taps `lanczos(r - d)` for integer
/// `r` in `[-a - p_x, a + p_x]`, normalized to sum 1.
pub fn lanczos_taps(spec: &ShiftSearchSpec, d: f64) -> Vec<f64> {
    let m = spec.margin() as i64;
    let mut taps: Vec<f64> = (-m..=m).map(|r| lanczos(r as f64 - d, spec.a)).collect();
    let total: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= total);
    taps
}

/// A 2-D shift kernel and the displacement it applies.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftKernel {
    pub dy: f64,
    pub dx: f64,
    /// `(width, width, 1)` outer product of the row and column taps.
    pub kernel: Tensor<f64>,
}

/// One kernel per `(dy, dx)` pair of candidate offsets, `dy` major.
pub fn lanczos_shift_kernels(spec: &ShiftSearchSpec) -> Result<Vec<ShiftKernel>> {
    let offsets = spec.offsets()?;
    let width = 2 * spec.margin() + 1;
    let mut out = Vec::with_capacity(offsets.len() * offsets.len());
    for &dy in &offsets {
        let ty = lanczos_taps(spec, dy);
        for &dx in &offsets {
            let tx = lanczos_taps(spec, dx);
            let kernel = Tensor::from_fn(width, width, 1, |i, j, _| ty[i] * tx[j]);
            out.push(ShiftKernel { dy, dx, kernel });
        }
    }
    Ok(out)
}

/// Weights and switches of the composite loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Raw weights of MAE, MSE, SSIM and SAM.
    pub weights: [f64; 4],
    /// Per-term switches; enabled weights are renormalized to sum 1.
    #[serde(default = "all_enabled")]
    pub enabled: [bool; 4],
    #[serde(default)]
    pub brightness_correct: bool,
    #[serde(default)]
    pub shift_search: Option<ShiftSearchSpec>,
    #[serde(default)]
    pub ssim: SsimParams,
}

fn all_enabled() -> [bool; 4] {
    [true; 4]
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            weights: [0.3, 0.3, 0.2, 0.2],
            enabled: all_enabled(),
            brightness_correct: false,
            shift_search: None,
            ssim: SsimParams::default(),
        }
    }
}

impl LossConfig {
    /// Weights after disabling terms and renormalizing.
    ///
    /// The last active weight absorbs the rounding remainder, so the
    /// left-to-right sum of the result is exactly 1.
    pub fn effective_weights(&self) -> Result<[f64; 4]> {
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(param_err!("loss weights must be finite and non-negative: {:?}", self.weights));
        }
        let active: Vec<usize> = (0..4).filter(|&i| self.enabled[i] && self.weights[i] > 0.0).collect();
        let Some(&last) = active.last() else {
            return Err(param_err!("every loss term is disabled or has zero weight"));
        };
        let total: f64 = active.iter().map(|&i| self.weights[i]).sum();
        if total == 1.0 {
            let mut w = [0.0; 4];
            active.iter().for_each(|&i| w[i] = self.weights[i]);
            return Ok(w);
        }
        let mut w = [0.0; 4];
        for &i in &active {
            w[i] = self.weights[i] / total;
        }
        w[last] = 1.0 - w[..last].iter().fold(0.0, |acc, v| acc + v);
        Ok(w)
    }

    /// Copy with the named term switched off.
    pub fn without(&self, term: usize) -> Self {
        let mut c = self.clone();
        c.enabled[term] = false;
        c
    }
}

/// `sr + mean(gt) - mean(sr)` per channel, with the means differentiable in `sr`.
pub fn brightness_compensate_graph<T: Real>(g: &mut Graph<T>, sr: Var, gt: Var) -> Result<Var> {
    g.value(sr).check_same_shape(g.value(gt))?;
    let mg = g.channel_mean(gt)?;
    let ms = g.channel_mean(sr)?;
    let bias = g.sub(mg, ms)?;
    g.add_channel_bias(sr, bias)
}

/// Plain-tensor brightness compensation.
pub fn brightness_compensate<T: Real>(sr: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    let mut g = Graph::new();
    let (s, t) = (g.constant(sr.clone()), g.constant(gt.clone()));
    let out = brightness_compensate_graph(&mut g, s, t)?;
    Ok(g.value(out).clone())
}

/// Differentiable mean SSIM.
pub fn ssim_graph<T: Real>(g: &mut Graph<T>, a: Var, b: Var, params: &SsimParams) -> Result<Var> {
    g.value(a).check_same_shape(g.value(b))?;
    let (h, w, _) = g.value(a).hwc()?;
    if h < params.window || w < params.window {
        return Err(shape_err!("image {h}x{w} smaller than the {0}x{0} SSIM window", params.window));
    }
    let win: Tensor<T> = ops::gaussian_window(params.window, params.sigma)?;
    let (c1, c2) = (T::from_f64(params.c1()), T::from_f64(params.c2()));
    let mu_a = g.filter_valid(a, &win)?;
    let mu_b = g.filter_valid(b, &win)?;
    let a2 = g.square(a);
    let b2 = g.square(b);
    let ab = g.mul(a, b)?;
    let e_aa = g.filter_valid(a2, &win)?;
    let e_bb = g.filter_valid(b2, &win)?;
    let e_ab = g.filter_valid(ab, &win)?;
    let mu_a2 = g.square(mu_a);
    let mu_b2 = g.square(mu_b);
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_a2)?;
    let var_b = g.sub(e_bb, mu_b2)?;
    let cov = g.sub(e_ab, mu_ab)?;
    let two = T::from_f64(2.0);
    let n1 = g.scale(mu_ab, two);
    let n1 = g.add_scalar(n1, c1);
    let n2 = g.scale(cov, two);
    let n2 = g.add_scalar(n2, c2);
    let d1 = g.add(mu_a2, mu_b2)?;
    let d1 = g.add_scalar(d1, c1);
    let d2 = g.add(var_a, var_b)?;
    let d2 = g.add_scalar(d2, c2);
    let num = g.mul(n1, n2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    Ok(g.mean_all(map))
}

/// Differentiable mean absolute error.
pub fn mae_graph<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean_all(d))
}

/// Differentiable mean squared error.
pub fn mse_graph<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.square(d);
    Ok(g.mean_all(d))
}

/// Differentiable mean spectral angle in radians.
pub fn sam_graph<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let m = g.spectral_angle(a, b)?;
    Ok(g.mean_all(m))
}

/// `l1 * MAE + l2 * MSE + l3 * (1 - SSIM) + l4 * SAM`, brightness-compensated first when enabled.
pub fn composite_loss_graph<T: Real>(g: &mut Graph<T>, sr: Var, gt: Var, cfg: &LossConfig) -> Result<Var> {
    g.value(sr).check_same_shape(g.value(gt))?;
    let w = cfg.effective_weights()?;
    let sr = if cfg.brightness_correct { brightness_compensate_graph(g, sr, gt)? } else { sr };
    let mut total: Option<Var> = None;
    for (k, &wk) in w.iter().enumerate() {
        if wk == 0.0 {
            continue;
        }
        let term = match k {
            0 => mae_graph(g, sr, gt)?,
            1 => mse_graph(g, sr, gt)?,
            2 => {
                let s = ssim_graph(g, sr, gt, &cfg.ssim)?;
                let neg = g.scale(s, -T::one());
                g.add_scalar(neg, T::one())
            }
            _ => sam_graph(g, sr, gt)?,
        };
        let weighted = g.scale(term, T::from_f64(wk));
        total = Some(match total {
            Some(t) => g.add(t, weighted)?,
            None => weighted,
        });
    }
    total.ok_or_else(|| Error::Parameter(String::from("no active loss term")))
}

/// Result of [`min_shift_loss_graph`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShiftChoice {
    pub loss: Var,
    pub dy: f64,
    pub dx: f64,
    /// Index of the selected candidate in [`lanczos_shift_kernels`] order.
    pub index: usize,
}

/// Composite loss minimized over Lanczos-shifted ground truths.
///
/// Both images lose an `a + p_x` border; the gradient follows the selected
/// candidate only (first one in scan order on ties).
pub fn min_shift_loss_graph<T: Real>(
    g: &mut Graph<T>,
    sr: Var,
    gt: &Tensor<T>,
    cfg: &LossConfig,
    spec: &ShiftSearchSpec,
) -> Result<ShiftChoice> {
    g.value(sr).check_same_shape(gt)?;
    let (h, w, _) = gt.hwc()?;
    let m = spec.margin();
    if h <= 2 * m || w <= 2 * m {
        return Err(shape_err!("{h}x{w} image too small for a shift-search margin of {m}"));
    }
    let kernels = lanczos_shift_kernels(spec)?;
    let sr_crop = g.crop(sr, m, m, h - 2 * m, w - 2 * m)?;
    let mut losses = Vec::with_capacity(kernels.len());
    for k in &kernels {
        let shifted = ops::filter_valid(gt, &k.kernel.cast())?;
        let gv = g.constant(shifted);
        losses.push(composite_loss_graph(g, sr_crop, gv, cfg)?);
    }
    let loss = g.min_of(&losses)?;
    let index = match g.node(loss).op {
        crate::graph::Op::MinOf { arg } => arg,
        _ => unreachable!(),
    };
    Ok(ShiftChoice { loss, dy: kernels[index].dy, dx: kernels[index].dx, index })
}

/// Training objective: composite loss, or its shift-search minimum when configured.
pub fn training_loss_graph<T: Real>(g: &mut Graph<T>, sr: Var, gt: &Tensor<T>, cfg: &LossConfig) -> Result<Var> {
    match &cfg.shift_search {
        Some(spec) => Ok(min_shift_loss_graph(g, sr, gt, cfg, spec)?.loss),
        None => {
            let gv = g.constant(gt.clone());
            composite_loss_graph(g, sr, gv, cfg)
        }
    }
}

/// Composite loss value of two plain tensors.
pub fn composite_loss<T: Real>(sr: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (s, t) = (g.constant(sr.clone()), g.constant(gt.clone()));
    let l = composite_loss_graph(&mut g, s, t, cfg)?;
    Ok(g.value(l).item()?.as_f64())
}

/// Shift-search minimum loss value of two plain tensors.
pub fn min_shift_loss<T: Real>(sr: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig, spec: &ShiftSearchSpec) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(sr.clone());
    let c = min_shift_loss_graph(&mut g, s, gt, cfg, spec)?;
    Ok(g.value(c.loss).item()?.as_f64())
}

/// Training objective value of two plain tensors.
pub fn training_loss<T: Real>(sr: &Tensor<T>, gt: &Tensor<T>, cfg: &LossConfig) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(sr.clone());
    let l = training_loss_graph(&mut g, s, gt, cfg)?;
    Ok(g.value(l).item()?.as_f64())
}
