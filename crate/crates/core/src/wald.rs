//! Synthetic multi-temporal scenes.
//!
//! A ground-truth high-resolution multispectral image is blurred and decimated
//! to a clean low-resolution frame, and each of the `T` observed frames is an
//! independently perturbed copy of it (integer shift, brightness factor,
//! Gaussian noise). The panchromatic image is passed through untouched.

use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Result};
use crate::ops::gaussian_taps;
use crate::rng::{self, domain, Rng};
use crate::tensor::Tensor;

/// Degradation applied to each low-resolution frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    /// Largest absolute integer shift per axis, in pixels.
    pub shift_max: usize,
    /// Standard deviation of additive Gaussian noise, as a fraction of [0, 1].
    pub noise_sigma: f64,
    /// Range of the per-frame multiplicative brightness factor.
    pub brightness: (f64, f64),
}

impl PerturbationSpec {
    pub fn new(shift_max: usize, noise_sigma: f64, brightness: (f64, f64)) -> Result<Self> {
        let spec = PerturbationSpec { shift_max, noise_sigma, brightness };
        spec.validate()?;
        Ok(spec)
    }

    /// No shift, no noise, unit brightness.
    pub const fn identity() -> Self {
        PerturbationSpec { shift_max: 0, noise_sigma: 0.0, brightness: (1.0, 1.0) }
    }

    /// Maps the perturbation intensity `epsilon` to shift 2 px,
    /// noise `0.1 * epsilon` and brightness `1 -/+ 0.05 * epsilon`.
    pub fn from_epsilon(epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(param_err!("epsilon must be a finite non-negative number, got {epsilon}"));
        }
        Self::new(2, epsilon / 10.0, (1.0 - epsilon / 20.0, 1.0 + epsilon / 20.0))
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.brightness;
        if !(self.noise_sigma >= 0.0) {
            return Err(param_err!("noise sigma must be non-negative"));
        }
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(param_err!("brightness range ({lo}, {hi}) must satisfy 0 < low <= high"));
        }
        Ok(())
    }
}

/// Random draws made while perturbing one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameDraw {
    /// Content displacement in rows (positive moves content down).
    pub dy: i32,
    /// Content displacement in columns (positive moves content right).
    pub dx: i32,
    pub factor: f64,
}

/// Translates image content by `(dy, dx)`, replicating edge pixels into the gap.
pub fn translate_replicate(img: &Tensor<f32>, dy: i32, dx: i32) -> Result<Tensor<f32>> {
    let (h, w, c) = img.hwc()?;
    let clamp = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
    Ok(Tensor::from_fn(h, w, c, |y, x, ch| {
        img.at(clamp(y as i64 - dy as i64, h), clamp(x as i64 - dx as i64, w), ch)
    }))
}

fn blur_axis(img: &Tensor<f32>, taps: &[f64], vertical: bool) -> Result<Tensor<f32>> {
    let (h, w, c) = img.hwc()?;
    let r = (taps.len() / 2) as i64;
    Ok(Tensor::from_fn(h, w, c, |y, x, ch| {
        let mut acc = 0.0f64;
        for (k, &t) in taps.iter().enumerate() {
            let off = k as i64 - r;
            let (sy, sx) = if vertical {
                ((y as i64 + off).clamp(0, h as i64 - 1) as usize, x)
            } else {
                (y, (x as i64 + off).clamp(0, w as i64 - 1) as usize)
            };
            acc += t * img.at(sy, sx, ch) as f64;
        }
        acc as f32
    }))
}

/// Gaussian blur (normalized, truncated at 3 sigma, replicated borders) then
/// `gamma`-fold decimation. Trailing rows/columns beyond a multiple of `gamma`
/// are dropped.
pub fn degrade_ms(gt: &Tensor<f32>, gamma: usize, blur_sigma: f64) -> Result<Tensor<f32>> {
    if gamma == 0 {
        return Err(param_err!("gamma must be >= 1"));
    }
    if !(blur_sigma >= 0.0) {
        return Err(param_err!("blur sigma must be non-negative, got {blur_sigma}"));
    }
    let (h, w, c) = gt.hwc()?;
    let (oh, ow) = (h / gamma, w / gamma);
    if oh == 0 || ow == 0 {
        return Err(shape_err!("{h}x{w} image too small for gamma {gamma}"));
    }
    let blurred = if blur_sigma > 0.0 {
        let radius = libm::ceil(3.0 * blur_sigma) as usize;
        let taps = gaussian_taps(2 * radius + 1, blur_sigma);
        blur_axis(&blur_axis(gt, &taps, true)?, &taps, false)?
    } else {
        gt.clone()
    };
    let offset = (gamma - 1) / 2;
    Ok(Tensor::from_fn(oh, ow, c, |y, x, ch| blurred.at(y * gamma + offset, x * gamma + offset, ch)))
}

/// Perturbs one frame: shift, then brightness, then noise, then clip to [0, 1].
pub fn perturb(img: &Tensor<f32>, spec: &PerturbationSpec, rng: &mut Rng) -> Result<Tensor<f32>> {
    Ok(perturb_traced(img, spec, rng)?.0)
}

/// [`perturb`] that also returns the random draws.
pub fn perturb_traced(img: &Tensor<f32>, spec: &PerturbationSpec, rng: &mut Rng) -> Result<(Tensor<f32>, FrameDraw)> {
    spec.validate()?;
    let m = spec.shift_max as i32;
    let dy = rng.random_range(-m..=m);
    let dx = rng.random_range(-m..=m);
    let (lo, hi) = spec.brightness;
    let factor = if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let mut out = translate_replicate(img, dy, dx)?;
    let f = factor as f32;
    let sigma = spec.noise_sigma;
    for v in out.data_mut() {
        let mut x = *v * f;
        if sigma > 0.0 {
            let n: f64 = rng.sample(StandardNormal);
            x += (sigma * n) as f32;
        }
        *v = x.clamp(0.0, 1.0);
    }
    Ok((out, FrameDraw { dy, dx, factor }))
}

/// Provenance of a synthesized scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneMeta {
    pub gamma: usize,
    pub frames: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub source_id: String,
    /// Source `(h, w)` before cropping to a multiple of gamma.
    pub source_hw: (usize, usize),
    pub blur_sigma: f64,
    pub perturbation: PerturbationSpec,
    pub draws: Vec<FrameDraw>,
}

/// One location: `T` low-resolution frames, a panchromatic image and the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub lrms: Vec<Tensor<f32>>,
    pub pan: Tensor<f32>,
    pub gt: Tensor<f32>,
    pub meta: SceneMeta,
}

impl Scene {
    /// Checks frame/pan/gt shape consistency.
    pub fn validate(&self) -> Result<()> {
        let first = self.lrms.first().ok_or_else(|| shape_err!("scene without frames"))?;
        let (lh, lw, lc) = first.hwc()?;
        for f in &self.lrms {
            if f.dims() != [lh, lw, lc] {
                return Err(shape_err!("frames disagree: {:?} vs {:?}", f.dims(), first.dims()));
            }
        }
        let (ph, pw, pc) = self.pan.hwc()?;
        let (gh, gw, gc) = self.gt.hwc()?;
        if pc != 1 {
            return Err(shape_err!("pan must have one channel, got {pc}"));
        }
        if (ph, pw) != (gh, gw) || gc != lc {
            return Err(shape_err!("pan {ph}x{pw} / gt {gh}x{gw}x{gc} inconsistent with frames"));
        }
        if lh * self.meta.gamma != gh || lw * self.meta.gamma != gw {
            return Err(shape_err!("frames {lh}x{lw} are not gt {gh}x{gw} / gamma {}", self.meta.gamma));
        }
        if self.lrms.len() != self.meta.frames {
            return Err(shape_err!("meta declares {} frames, scene has {}", self.meta.frames, self.lrms.len()));
        }
        Ok(())
    }

    /// Copy keeping only the first `t` frames.
    pub fn with_frames(&self, t: usize) -> Result<Scene> {
        if t == 0 || t > self.lrms.len() {
            return Err(param_err!("requested {t} frames, scene has {}", self.lrms.len()));
        }
        let mut s = self.clone();
        s.lrms.truncate(t);
        s.meta.frames = t;
        s.meta.draws.truncate(t);
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Scenes with their split assignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSet {
    pub scenes: Vec<Scene>,
    pub splits: Vec<Split>,
}

impl SceneSet {
    pub fn new(scenes: Vec<Scene>, splits: Vec<Split>) -> Result<Self> {
        if scenes.len() != splits.len() {
            return Err(shape_err!("{} scenes but {} split tags", scenes.len(), splits.len()));
        }
        Ok(SceneSet { scenes, splits })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn split(&self, which: Split) -> Vec<&Scene> {
        self.scenes.iter().zip(&self.splits).filter(|(_, s)| **s == which).map(|(sc, _)| sc).collect()
    }

    pub fn indices(&self, which: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == which).collect()
    }
}

/// Seeded split assignment: `floor(n * val)` validation and `floor(n * test)`
/// test scenes, the rest train.
pub fn assign_splits(n: usize, seed: u64, val_fraction: f64, test_fraction: f64) -> Result<Vec<Split>> {
    if !(0.0..1.0).contains(&val_fraction) || !(0.0..1.0).contains(&test_fraction) || val_fraction + test_fraction >= 1.0 {
        return Err(param_err!("split fractions ({val_fraction}, {test_fraction}) leave no training data"));
    }
    let n_val = libm::floor(n as f64 * val_fraction) as usize;
    let n_test = libm::floor(n as f64 * test_fraction) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed ^ domain::SPLIT, 0));
    let mut splits = alloc::vec![Split::Train; n];
    for &i in &order[..n_val] {
        splits[i] = Split::Val;
    }
    for &i in &order[n_val..n_val + n_test] {
        splits[i] = Split::Test;
    }
    Ok(splits)
}

/// Inputs to [`synthesize_scene_with`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub gamma: usize,
    pub frames: usize,
    pub epsilon: f64,
    pub perturbation: PerturbationSpec,
    pub blur_sigma: f64,
    pub seed: u64,
    pub source_id: String,
}

impl SynthParams {
    /// Defaults: perturbation from `epsilon`, blur sigma `gamma / 2`.
    pub fn new(gamma: usize, frames: usize, epsilon: f64, seed: u64) -> Result<Self> {
        Ok(SynthParams {
            gamma,
            frames,
            epsilon,
            perturbation: PerturbationSpec::from_epsilon(epsilon)?,
            blur_sigma: gamma as f64 / 2.0,
            seed,
            source_id: String::new(),
        })
    }
}

/// Builds a scene with the default degradation for `epsilon`.
pub fn synthesize_scene(gt: &Tensor<f32>, pan: &Tensor<f32>, gamma: usize, frames: usize, epsilon: f64, seed: u64) -> Result<Scene> {
    synthesize_scene_with(gt, pan, &SynthParams::new(gamma, frames, epsilon, seed)?)
}

/// Builds a scene. Frame `t` draws from stream `t` of `params.seed`, so a
/// frame does not depend on how many frames are requested.
pub fn synthesize_scene_with(gt: &Tensor<f32>, pan: &Tensor<f32>, params: &SynthParams) -> Result<Scene> {
    let (gh, gw, _) = gt.hwc()?;
    let (ph, pw, pc) = pan.hwc()?;
    if (gh, gw) != (ph, pw) || pc != 1 {
        return Err(shape_err!("gt {gh}x{gw} and pan {ph}x{pw}x{pc} are not aligned single-band pan"));
    }
    if params.frames == 0 {
        return Err(param_err!("at least one frame is required"));
    }
    if params.gamma == 0 {
        return Err(param_err!("gamma must be >= 1"));
    }
    params.perturbation.validate()?;
    let (h, w) = (gh / params.gamma * params.gamma, gw / params.gamma * params.gamma);
    let (gt, pan) = if (h, w) == (gh, gw) { (gt.clone(), pan.clone()) } else { (gt.crop(0, 0, h, w)?, pan.crop(0, 0, h, w)?) };
    let base = degrade_ms(&gt, params.gamma, params.blur_sigma)?;
    let mut lrms = Vec::with_capacity(params.frames);
    let mut draws = Vec::with_capacity(params.frames);
    for t in 0..params.frames {
        let mut r = rng::stream(params.seed, t as u64);
        let (frame, draw) = perturb_traced(&base, &params.perturbation, &mut r)?;
        lrms.push(frame);
        draws.push(draw);
    }
    Ok(Scene {
        lrms,
        pan,
        gt,
        meta: SceneMeta {
            gamma: params.gamma,
            frames: params.frames,
            epsilon: params.epsilon,
            seed: params.seed,
            source_id: params.source_id.clone(),
            source_hw: (gh, gw),
            blur_sigma: params.blur_sigma,
            perturbation: params.perturbation,
            draws,
        },
    })
}

/// Convex weights mixing the multispectral bands into the panchromatic band.
pub fn pan_weights(bands: usize) -> Vec<f32> {
    let total = (bands * (bands + 1) / 2) as f32;
    (0..bands).map(|c| (c + 1) as f32 / total).collect()
}

struct Mode {
    fy: f64,
    fx: f64,
    phase: f64,
    amp: f64,
}

fn draw_modes(rng: &mut Rng, count: usize, max_freq: f64) -> Vec<Mode> {
    (0..count)
        .map(|_| {
            let fy = rng.random_range(-max_freq..=max_freq);
            let fx = rng.random_range(-max_freq..=max_freq);
            let amp = rng.random_range(0.5..=1.0) / (1.0 + 0.25 * libm::sqrt(fy * fy + fx * fx));
            Mode { fy, fx, phase: rng.random_range(0.0..core::f64::consts::TAU), amp }
        })
        .collect()
}

fn eval_modes(modes: &[Mode], y: f64, x: f64, h: f64, w: f64) -> f64 {
    modes
        .iter()
        .map(|m| m.amp * libm::cos(core::f64::consts::TAU * (m.fy * y / h + m.fx * x / w) + m.phase))
        .sum()
}

/// Smooth random multi-band field in [0, 1] and its panchromatic mixture.
///
/// Bands share a set of 2-D cosine modes and each adds its own texture; every
/// band is rescaled to [0.05, 0.95]. The pan image is `sum_c pan_weights[c] * gt_c`.
pub fn generate_procedural(seed: u64, h: usize, w: usize, bands: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if h < 8 || w < 8 || bands == 0 {
        return Err(param_err!("procedural scenes need h, w >= 8 and at least one band"));
    }
    let mut r = rng::stream(seed ^ domain::PROCEDURAL, 0);
    let max_freq = (h.min(w) / 4) as f64;
    let shared = draw_modes(&mut r, 8, max_freq);
    let own: Vec<Vec<Mode>> = (0..bands).map(|_| draw_modes(&mut r, 4, max_freq)).collect();
    let gains: Vec<f64> = (0..bands).map(|_| r.random_range(0.6..=1.0)).collect();
    let (hf, wf) = (h as f64, w as f64);
    let mut field = alloc::vec![0f64; h * w * bands];
    for y in 0..h {
        for x in 0..w {
            let s = eval_modes(&shared, y as f64, x as f64, hf, wf);
            for c in 0..bands {
                field[(y * w + x) * bands + c] = gains[c] * s + 0.5 * eval_modes(&own[c], y as f64, x as f64, hf, wf);
            }
        }
    }
    for c in 0..bands {
        let vals = field.iter().skip(c).step_by(bands);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        for v in field.iter_mut().skip(c).step_by(bands) {
            *v = 0.05 + 0.9 * (*v - lo) / span;
        }
    }
    let gt = Tensor::image(h, w, bands, field.iter().map(|&v| v as f32).collect())?;
    let weights = pan_weights(bands);
    let pan = Tensor::from_fn(h, w, 1, |y, x, _| (0..bands).map(|c| weights[c] * gt.at(y, x, c)).sum::<f32>().clamp(0.0, 1.0));
    Ok((gt, pan))
}

/// Clean source pair a scene is synthesized from.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseScene {
    pub id: String,
    pub gt: Tensor<f32>,
    pub pan: Tensor<f32>,
}

/// `count` procedural base scenes derived from `seed`.
pub fn procedural_bases(count: usize, seed: u64, h: usize, w: usize, bands: usize) -> Result<Vec<BaseScene>> {
    (0..count)
        .map(|i| {
            let (gt, pan) = generate_procedural(rng::derive_seed(seed, domain::PROCEDURAL, i as u64), h, w, bands)?;
            Ok(BaseScene { id: alloc::format!("proc{i:04}"), gt, pan })
        })
        .collect()
}

/// Settings for synthesizing a whole [`SceneSet`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetConfig {
    pub gamma: usize,
    pub frames: usize,
    pub epsilon: f64,
    /// Overrides the 2 px shift implied by `epsilon`.
    #[serde(default)]
    pub shift_max: Option<usize>,
    /// Overrides the default blur sigma of `gamma / 2`.
    #[serde(default)]
    pub blur_sigma: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_split_fraction")]
    pub val_fraction: f64,
    #[serde(default = "default_split_fraction")]
    pub test_fraction: f64,
}

fn default_split_fraction() -> f64 {
    0.15
}

impl SetConfig {
    pub fn new(gamma: usize, frames: usize, epsilon: f64, seed: u64) -> Self {
        SetConfig {
            gamma,
            frames,
            epsilon,
            shift_max: None,
            blur_sigma: None,
            seed,
            val_fraction: default_split_fraction(),
            test_fraction: default_split_fraction(),
        }
    }

    /// Synthesis parameters for scene `index`, seeded from `(seed, index)`.
    pub fn scene_params(&self, index: usize, source_id: &str) -> Result<SynthParams> {
        let mut p = SynthParams::new(self.gamma, self.frames, self.epsilon, rng::derive_seed(self.seed, domain::SCENE, index as u64))?;
        if let Some(s) = self.shift_max {
            p.perturbation.shift_max = s;
        }
        if let Some(b) = self.blur_sigma {
            p.blur_sigma = b;
        }
        p.source_id = String::from(source_id);
        Ok(p)
    }
}

/// Synthesizes scene `index` of a set; independent of every other index.
pub fn synthesize_indexed(bases: &[BaseScene], cfg: &SetConfig, index: usize) -> Result<Scene> {
    let b = bases.get(index).ok_or_else(|| param_err!("no base scene {index}"))?;
    synthesize_scene_with(&b.gt, &b.pan, &cfg.scene_params(index, &b.id)?)
}

/// Synthesizes every base scene and assigns splits.
pub fn synthesize_set(bases: &[BaseScene], cfg: &SetConfig) -> Result<SceneSet> {
    let scenes = (0..bases.len()).map(|i| synthesize_indexed(bases, cfg, i)).collect::<Result<Vec<_>>>()?;
    let splits = assign_splits(scenes.len(), cfg.seed, cfg.val_fraction, cfg.test_fraction)?;
    SceneSet::new(scenes, splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn epsilon_mapping() {
        assert_eq!(PerturbationSpec::from_epsilon(0.0).unwrap(), PerturbationSpec::new(2, 0.0, (1.0, 1.0)).unwrap());
        assert_eq!(PerturbationSpec::from_epsilon(1.0).unwrap(), PerturbationSpec::new(2, 0.1, (0.95, 1.05)).unwrap());
        assert_eq!(PerturbationSpec::from_epsilon(3.0).unwrap(), PerturbationSpec::new(2, 0.3, (0.85, 1.15)).unwrap());
        assert!(PerturbationSpec::from_epsilon(-0.5).is_err());
    }

    #[test]
    fn degrade_shapes_and_constants() {
        let x = Tensor::full(Shape::image(8, 8, 3), 0.4f32);
        let d = degrade_ms(&x, 2, 1.0).unwrap();
        assert_eq!(d.dims(), &[4, 4, 3]);
        assert!(d.data().iter().all(|v| (v - 0.4).abs() < 1e-6));
        assert!(degrade_ms(&x, 0, 1.0).is_err());
    }

    #[test]
    fn null_perturbation_is_identity() {
        let x = Tensor::from_fn(5, 6, 2, |y, x, c| ((y * 6 + x) * 2 + c) as f32 / 60.0);
        let mut r = rng::stream(1, 0);
        assert_eq!(perturb(&x, &PerturbationSpec::identity(), &mut r).unwrap(), x);
    }

    #[test]
    fn forced_brightness() {
        let x = Tensor::from_fn(4, 4, 1, |y, x, _| (y * 4 + x) as f32 / 20.0);
        let spec = PerturbationSpec::new(0, 0.0, (1.05, 1.05)).unwrap();
        let out = perturb(&x, &spec, &mut rng::stream(3, 0)).unwrap();
        for (o, i) in out.data().iter().zip(x.data()) {
            assert_eq!(*o, i * 1.05f32);
        }
    }

    #[test]
    fn translation_replicates_edges() {
        let x = Tensor::from_fn(3, 3, 1, |y, x, _| (y * 3 + x) as f32);
        let t = translate_replicate(&x, 1, -1).unwrap();
        assert_eq!(t.data(), &[1.0, 2.0, 2.0, 1.0, 2.0, 2.0, 4.0, 5.0, 5.0]);
    }

    #[test]
    fn splits_cover_everything() {
        let s = assign_splits(20, 9, 0.15, 0.15).unwrap();
        assert_eq!(s.iter().filter(|&&x| x == Split::Val).count(), 3);
        assert_eq!(s.iter().filter(|&&x| x == Split::Test).count(), 3);
        assert_eq!(s.iter().filter(|&&x| x == Split::Train).count(), 14);
        assert!(assign_splits(4, 0, 0.5, 0.5).is_err());
    }

    #[test]
    fn scene_crops_to_gamma_multiple() {
        let (gt, pan) = generate_procedural(1, 17, 18, 3).unwrap();
        let s = synthesize_scene(&gt, &pan, 4, 2, 0.0, 5).unwrap();
        assert_eq!(s.gt.dims(), &[16, 16, 3]);
        assert_eq!(s.lrms[0].dims(), &[4, 4, 3]);
        assert_eq!(s.meta.source_hw, (17, 18));
        s.validate().unwrap();
    }
}
