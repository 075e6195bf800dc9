//! The fusion network.
//!
//! A shared encoder maps every low-resolution frame to features, a multi-image
//! fusion plug-in merges them, and a pixel-shuffle decoder lifts the result to
//! the panchromatic grid. A sharpening plug-in then injects panchromatic
//! detail, and a composition head sums both branches and applies two 1x1
//! convolutions.
//!
//! All stages are written once against [`Graph`]; the plain-tensor methods on
//! [`FusionModel`] build a throwaway graph with constant parameters.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, shape_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::ops::{BatchStats, RunningStats};
use crate::param::ParamStore;
use crate::real::Real;
use crate::rng;
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisrPlugin {
    /// Element-wise frame average followed by a 3x3 projection.
    #[default]
    Mean,
    /// Channel concatenation followed by a 9x9 / 5x5 / 5x5 conv stack.
    SrcnnStack,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharpenPlugin {
    /// The conv stack output is the sharpened image.
    Direct,
    /// The conv stack output is a detail map added to the upsampled input.
    #[default]
    Residual,
}

/// How the multi-temporal branch produces its upsampled image.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtifMode {
    #[default]
    Learned,
    /// Bilinear upsample of the first frame; no learned parameters.
    BilinearFrame0,
}

/// Network shape and plug-in selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Output height.
    pub h: usize,
    /// Output width.
    pub w: usize,
    pub gamma: usize,
    pub frames: usize,
    pub c_ms: usize,
    /// Frame size; `(h / gamma, w / gamma)` when unset.
    pub lr_size: Option<(usize, usize)>,
    pub c_hidden_encode: usize,
    pub c_misr: usize,
    /// Pixel-shuffle factor; derived from `gamma` and `c_misr` when unset.
    pub shuffle_r: Option<usize>,
    pub c_hidden_sharpen: usize,
    /// Conv / batch-norm / PReLU blocks after the pixel shuffle.
    pub decoder_blocks: usize,
    pub misr_plugin: MisrPlugin,
    pub sharpen_plugin: SharpenPlugin,
    pub compose_adjust: bool,
    pub mtif: MtifMode,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            h: 156,
            w: 156,
            gamma: 3,
            frames: 8,
            c_ms: 3,
            lr_size: Some((50, 50)),
            c_hidden_encode: 128,
            c_misr: 128,
            shuffle_r: None,
            c_hidden_sharpen: 32,
            decoder_blocks: 1,
            misr_plugin: MisrPlugin::Mean,
            sharpen_plugin: SharpenPlugin::Residual,
            compose_adjust: true,
            mtif: MtifMode::Learned,
            bn_eps: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl FusionConfig {
    /// Small square configuration for experiments on procedural data.
    pub fn toy(size: usize, gamma: usize, frames: usize, c_ms: usize, c_hidden: usize) -> Self {
        FusionConfig {
            h: size,
            w: size,
            gamma,
            frames,
            c_ms,
            lr_size: None,
            c_hidden_encode: c_hidden,
            c_misr: 2 * c_hidden,
            c_hidden_sharpen: c_hidden,
            ..FusionConfig::default()
        }
    }

    /// Frame height and width.
    pub fn lr_dims(&self) -> (usize, usize) {
        match self.lr_size {
            Some(d) => d,
            None if self.gamma == 0 => (0, 0),
            None => (self.h / self.gamma, self.w / self.gamma),
        }
    }

    /// Explicit `shuffle_r`, else `gamma` if `gamma^2` divides `c_misr`, else the
    /// largest `r <= gamma` with `r^2 | c_misr`.
    pub fn shuffle_factor(&self) -> usize {
        if let Some(r) = self.shuffle_r {
            return r;
        }
        (1..=self.gamma.max(1)).rev().find(|r| self.c_misr % (r * r) == 0).unwrap_or(1)
    }

    /// Channels between the pixel shuffle and the projection.
    pub fn decoder_width(&self) -> usize {
        let r = self.shuffle_factor();
        self.c_misr / (r * r)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("h", self.h),
            ("w", self.w),
            ("gamma", self.gamma),
            ("frames", self.frames),
            ("c_ms", self.c_ms),
            ("c_hidden_encode", self.c_hidden_encode),
            ("c_misr", self.c_misr),
            ("c_hidden_sharpen", self.c_hidden_sharpen),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(param_err!("fusion config: {name} must be >= 1"));
            }
        }
        let (lh, lw) = self.lr_dims();
        if lh == 0 || lw == 0 {
            return Err(param_err!("fusion config: frame size {lh}x{lw} is empty"));
        }
        let r = self.shuffle_factor();
        if r == 0 || r > self.gamma {
            return Err(param_err!("fusion config: shuffle_r {r} must be in 1..={}", self.gamma));
        }
        if self.c_misr % (r * r) != 0 {
            return Err(param_err!("fusion config: c_misr {} not divisible by shuffle_r^2 = {}", self.c_misr, r * r));
        }
        if !(self.bn_eps > 0.0) {
            return Err(param_err!("fusion config: bn_eps must be positive"));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(param_err!("fusion config: bn_momentum must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Whether batch norm uses batch statistics or the stored running averages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Train,
    Infer,
}

/// Parameters, batch-norm buffers and configuration of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionModel<T = f32> {
    config: FusionConfig,
    params: ParamStore<T>,
    running: Vec<RunningStats<T>>,
}

struct Init<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: rng::Rng,
}

impl<T: Real> Init<'_, T> {
    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, bias: bool) -> Result<()> {
        let bound = libm::sqrt(6.0 / (k * k * cin) as f64);
        let n = k * k * cin * cout;
        let data = (0..n).map(|_| T::from_f64((2.0 * self.rng.random::<f64>() - 1.0) * bound)).collect();
        self.store.add(&format!("{name}.weight"), Tensor::from_vec(Shape::kernel(k, k, cin, cout), data)?)?;
        if bias {
            self.store.add(&format!("{name}.bias"), Tensor::zeros(Shape::vector(cout)))?;
        }
        Ok(())
    }

    /// 1x1 convs `c -> 2c -> c` computing `relu(x) - relu(-x) = x`.
    fn split_identity(&mut self, first: &str, second: &str, c: usize) -> Result<()> {
        let mut up = Tensor::zeros(Shape::kernel(1, 1, c, 2 * c));
        let mut down = Tensor::zeros(Shape::kernel(1, 1, 2 * c, c));
        for i in 0..c {
            up.data_mut()[i * 2 * c + i] = T::one();
            up.data_mut()[i * 2 * c + c + i] = -T::one();
            down.data_mut()[i * c + i] = T::one();
            down.data_mut()[(c + i) * c + i] = -T::one();
        }
        self.store.add(&format!("{first}.weight"), up)?;
        self.store.add(&format!("{first}.bias"), Tensor::zeros(Shape::vector(2 * c)))?;
        self.store.add(&format!("{second}.weight"), down)?;
        self.store.add(&format!("{second}.bias"), Tensor::zeros(Shape::vector(c)))?;
        Ok(())
    }

    fn prelu(&mut self, name: &str, c: usize) -> Result<()> {
        self.store.add(&format!("{name}.slope"), Tensor::full(Shape::vector(c), T::from_f64(0.25)))?;
        Ok(())
    }

    fn bn(&mut self, name: &str, c: usize) -> Result<()> {
        self.store.add(&format!("{name}.scale"), Tensor::full(Shape::vector(c), T::one()))?;
        self.store.add(&format!("{name}.shift"), Tensor::zeros(Shape::vector(c)))?;
        Ok(())
    }
}

impl<T: Real> FusionModel<T> {
    /// Freshly initialized network: He-uniform conv weights, zero biases,
    /// PReLU slopes 0.25, and a composition head that starts as the identity.
    pub fn new(config: FusionConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = Init { store: &mut store, rng: rng::stream(rng::derive_seed(seed, rng::domain::INIT, 0), 0) };
        let c = &config;
        if c.mtif == MtifMode::Learned {
            let (ce, cm) = (c.c_hidden_encode, c.c_misr);
            init.conv("encoder.conv1", 3, c.c_ms, ce, true)?;
            init.prelu("encoder.act1", ce)?;
            init.conv("encoder.conv2", 3, ce, ce, true)?;
            init.prelu("encoder.act2", ce)?;
            match c.misr_plugin {
                MisrPlugin::Mean => {
                    init.conv("misr.conv", 3, ce, cm, true)?;
                    init.prelu("misr.act", cm)?;
                }
                MisrPlugin::SrcnnStack => {
                    init.conv("misr.conv1", 9, ce * c.frames, cm, true)?;
                    init.prelu("misr.act1", cm)?;
                    init.conv("misr.conv2", 5, cm, cm, true)?;
                    init.prelu("misr.act2", cm)?;
                    init.conv("misr.conv3", 5, cm, cm, true)?;
                }
            }
            init.conv("decoder.conv_in", 3, cm, cm, true)?;
            let cd = c.decoder_width();
            for b in 0..c.decoder_blocks {
                // Bias would be cancelled by the batch norm that follows.
                init.conv(&format!("decoder.block{b}.conv"), 3, cd, cd, false)?;
                init.bn(&format!("decoder.block{b}.bn"), cd)?;
                init.prelu(&format!("decoder.block{b}.act"), cd)?;
            }
            init.conv("decoder.proj", 3, cd, c.c_ms, true)?;
        }
        let cs = c.c_hidden_sharpen;
        init.conv("sharpen.conv1", 3, c.c_ms + 1, cs, true)?;
        init.prelu("sharpen.act1", cs)?;
        init.conv("sharpen.conv2", 3, cs, cs, true)?;
        init.prelu("sharpen.act2", cs)?;
        init.conv("sharpen.conv3", 3, cs, c.c_ms, true)?;
        if c.compose_adjust {
            init.split_identity("compose.conv1", "compose.conv2", c.c_ms)?;
        }
        let blocks = if c.mtif == MtifMode::Learned { c.decoder_blocks } else { 0 };
        let running = (0..blocks).map(|_| RunningStats::new(config.decoder_width())).collect();
        Ok(FusionModel { config, params: store, running })
    }

    pub fn config(&self) -> &FusionConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Batch-norm running statistics, one entry per decoder block.
    pub fn running(&self) -> &[RunningStats<T>] {
        &self.running
    }

    /// Replaces the value of parameter `name`, keeping its shape.
    pub fn set_param(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self.params.by_name_mut(name).ok_or_else(|| Error::Usage(format!("no parameter named {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(shape_err!("parameter {name} has shape {:?}, got {:?}", p.value.dims(), value.dims()));
        }
        p.value = value;
        Ok(())
    }

    /// Folds the batch statistics of one training forward into the running averages.
    pub fn update_running(&mut self, stats: &[BatchStats<T>]) -> Result<()> {
        if stats.len() != self.running.len() {
            return Err(shape_err!("{} batch statistics for {} batch-norm layers", stats.len(), self.running.len()));
        }
        let m = T::from_f64(self.config.bn_momentum);
        for (r, s) in self.running.iter_mut().zip(stats) {
            r.update(s, m);
        }
        Ok(())
    }

    /// Parameters followed by batch-norm buffers, each with a unique name.
    pub fn named_tensors(&self) -> Vec<(String, Tensor<T>)> {
        let mut out: Vec<(String, Tensor<T>)> = self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for (b, r) in self.running.iter().enumerate() {
            let n = r.mean.len();
            out.push((format!("decoder.block{b}.bn.running_mean"), Tensor::from_parts(Shape::vector(n), r.mean.clone())));
            out.push((format!("decoder.block{b}.bn.running_var"), Tensor::from_parts(Shape::vector(n), r.var.clone())));
        }
        out
    }

    /// Restores every tensor listed by [`named_tensors`](Self::named_tensors).
    pub fn load_named(&mut self, items: &[(String, Tensor<T>)]) -> Result<()> {
        let expected = self.named_tensors();
        if items.len() != expected.len() {
            return Err(shape_err!("checkpoint holds {} tensors, model needs {}", items.len(), expected.len()));
        }
        for (name, t) in items {
            let (_, want) = expected
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| shape_err!("checkpoint tensor {name} is not part of the model"))?;
            if want.shape() != t.shape() {
                return Err(shape_err!("checkpoint tensor {name} has shape {:?}, expected {:?}", t.dims(), want.dims()));
            }
        }
        for (name, t) in items {
            if let Some(rest) = name.strip_prefix("decoder.block") {
                if let Some((idx, field)) = rest.split_once(".bn.running_") {
                    let b: usize = idx.parse().map_err(|_| shape_err!("bad buffer name {name}"))?;
                    let target = if field == "mean" { &mut self.running[b].mean } else { &mut self.running[b].var };
                    target.clone_from_slice(t.data());
                    continue;
                }
            }
            self.set_param(name, t.clone())?;
        }
        Ok(())
    }

    /// Starts a forward pass on `g`. With `track` the parameters are gradient leaves
    /// bound to their store ids, otherwise constants.
    pub fn forward_on<'m>(&'m self, g: &mut Graph<T>, phase: Phase, track: bool) -> Forward<'m, T> {
        let vars = if track {
            self.params.bind(g)
        } else {
            self.params.iter().map(|p| g.constant(p.value.clone())).collect()
        };
        Forward { model: self, vars, phase, stats: Vec::new() }
    }

    fn check_frame(&self, t: &Tensor<T>) -> Result<()> {
        let (lh, lw) = self.config.lr_dims();
        if t.dims() != [lh, lw, self.config.c_ms] {
            return Err(shape_err!("frame shape {:?}, expected {lh}x{lw}x{}", t.dims(), self.config.c_ms));
        }
        Ok(())
    }

    fn check_inputs(&self, frames: &[Tensor<T>], pan: &Tensor<T>) -> Result<()> {
        if frames.len() != self.config.frames {
            return Err(shape_err!("{} frames given, model expects {}", frames.len(), self.config.frames));
        }
        frames.iter().try_for_each(|f| self.check_frame(f))?;
        if pan.dims() != [self.config.h, self.config.w, 1] {
            return Err(shape_err!("pan shape {:?}, expected {}x{}x1", pan.dims(), self.config.h, self.config.w));
        }
        Ok(())
    }

    fn run<R>(&self, f: impl FnOnce(&mut Forward<'_, T>, &mut Graph<T>) -> Result<R>) -> Result<R> {
        let mut g = Graph::new();
        let mut fw = self.forward_on(&mut g, Phase::Infer, false);
        f(&mut fw, &mut g)
    }

    fn learned(&self) -> Result<()> {
        match self.config.mtif {
            MtifMode::Learned => Ok(()),
            MtifMode::BilinearFrame0 => Err(Error::Usage(String::from("model has no learned multi-temporal branch"))),
        }
    }

    /// Shared encoder applied to one frame.
    pub fn encode(&self, frame: &Tensor<T>) -> Result<Tensor<T>> {
        self.learned()?;
        self.check_frame(frame)?;
        self.run(|fw, g| {
            let x = g.constant(frame.clone());
            let y = fw.encode(g, x)?;
            Ok(g.value(y).clone())
        })
    }

    /// Multi-image fusion of per-frame features.
    pub fn misr_fuse(&self, features: &[Tensor<T>]) -> Result<Tensor<T>> {
        self.learned()?;
        self.run(|fw, g| {
            let xs: Vec<Var> = features.iter().map(|f| g.constant(f.clone())).collect();
            let y = fw.misr(g, &xs)?;
            Ok(g.value(y).clone())
        })
    }

    /// Pixel-shuffle decoder, using running batch-norm statistics.
    pub fn decode(&self, x_misr: &Tensor<T>) -> Result<Tensor<T>> {
        self.learned()?;
        self.run(|fw, g| {
            let x = g.constant(x_misr.clone());
            let y = fw.decode(g, &[x])?;
            Ok(g.value(y[0]).clone())
        })
    }

    /// Multi-temporal branch on one frame stack.
    pub fn mtif_forward(&self, frames: &[Tensor<T>]) -> Result<Tensor<T>> {
        if frames.len() != self.config.frames {
            return Err(shape_err!("{} frames given, model expects {}", frames.len(), self.config.frames));
        }
        frames.iter().try_for_each(|f| self.check_frame(f))?;
        self.run(|fw, g| {
            let xs: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
            let y = fw.mtif(g, &[xs])?;
            Ok(g.value(y[0]).clone())
        })
    }

    /// Sharpening branch.
    pub fn msif_forward(&self, sr_mtif: &Tensor<T>, pan: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(|fw, g| {
            let (s, p) = (g.constant(sr_mtif.clone()), g.constant(pan.clone()));
            let y = fw.msif(g, s, p)?;
            Ok(g.value(y).clone())
        })
    }

    /// Composition head.
    pub fn compose(&self, sr_mtif: &Tensor<T>, sr_msif: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(|fw, g| {
            let (a, b) = (g.constant(sr_mtif.clone()), g.constant(sr_msif.clone()));
            let y = fw.compose(g, a, b)?;
            Ok(g.value(y).clone())
        })
    }

    /// Unclamped network output for one scene.
    pub fn forward(&self, frames: &[Tensor<T>], pan: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_inputs(frames, pan)?;
        self.run(|fw, g| {
            let xs: Vec<Var> = frames.iter().map(|f| g.constant(f.clone())).collect();
            let p = g.constant(pan.clone());
            let y = fw.scenes(g, &[(xs, p)])?;
            Ok(g.value(y[0]).clone())
        })
    }

    /// Inference output clamped to `[0, 1]`.
    pub fn fuse(&self, frames: &[Tensor<T>], pan: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(frames, pan)?.clamp(T::zero(), T::one()))
    }
}

/// Anything that turns a frame stack and a pan image into a fused image.
pub trait Fuser {
    fn fuse_scene(&self, frames: &[Tensor<f32>], pan: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl Fuser for FusionModel<f32> {
    fn fuse_scene(&self, frames: &[Tensor<f32>], pan: &Tensor<f32>) -> Result<Tensor<f32>> {
        let t = self.config.frames;
        if frames.len() < t {
            return Err(shape_err!("scene has {} frames, model needs {t}", frames.len()));
        }
        self.fuse(&frames[..t], pan)
    }
}

/// One forward pass recorded on a graph.
pub struct Forward<'m, T> {
    model: &'m FusionModel<T>,
    vars: Vec<Var>,
    phase: Phase,
    /// Batch statistics of each decoder block, filled in the training phase.
    pub stats: Vec<BatchStats<T>>,
}

impl<T: Real> Forward<'_, T> {
    fn p(&self, name: &str) -> Result<Var> {
        let id = self.model.params.id(name).ok_or_else(|| Error::Usage(format!("no parameter named {name}")))?;
        Ok(self.vars[id])
    }

    fn has(&self, name: &str) -> bool {
        self.model.params.id(name).is_some()
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        let w = self.p(&format!("{name}.weight"))?;
        let b_name = format!("{name}.bias");
        let b = if self.has(&b_name) { Some(self.p(&b_name)?) } else { None };
        let k = g.value(w).dims()[0];
        g.conv2d(x, w, b, 1, k / 2)
    }

    fn act(&self, g: &mut Graph<T>, x: Var, name: &str) -> Result<Var> {
        let s = self.p(&format!("{name}.slope"))?;
        g.prelu(x, s)
    }

    pub fn encode(&self, g: &mut Graph<T>, frame: Var) -> Result<Var> {
        let x = self.conv(g, frame, "encoder.conv1")?;
        let x = self.act(g, x, "encoder.act1")?;
        let x = self.conv(g, x, "encoder.conv2")?;
        self.act(g, x, "encoder.act2")
    }

    pub fn misr(&self, g: &mut Graph<T>, features: &[Var]) -> Result<Var> {
        if features.is_empty() {
            return Err(Error::Empty(String::from("no frame features to fuse")));
        }
        let first = g.value(features[0]).shape();
        if features.iter().any(|&f| g.value(f).shape() != first) {
            return Err(shape_err!("frame features differ in shape"));
        }
        match self.model.config.misr_plugin {
            MisrPlugin::Mean => {
                let m = g.mean_stack(features)?;
                let x = self.conv(g, m, "misr.conv")?;
                self.act(g, x, "misr.act")
            }
            MisrPlugin::SrcnnStack => {
                let cat = g.concat_channels(features)?;
                let x = self.conv(g, cat, "misr.conv1")?;
                let x = self.act(g, x, "misr.act1")?;
                let x = self.conv(g, x, "misr.conv2")?;
                let x = self.act(g, x, "misr.act2")?;
                self.conv(g, x, "misr.conv3")
            }
        }
    }

    /// Decodes a batch; batch norm pools statistics over every scene in it.
    pub fn decode(&mut self, g: &mut Graph<T>, xs: &[Var]) -> Result<Vec<Var>> {
        let cfg = &self.model.config;
        let r = cfg.shuffle_factor();
        let mut ys = Vec::with_capacity(xs.len());
        for &x in xs {
            let c = g.value(x).hwc()?.2;
            if c % (r * r) != 0 {
                return Err(shape_err!("decoder input has {c} channels, not divisible by {}", r * r));
            }
            let y = self.conv(g, x, "decoder.conv_in")?;
            ys.push(g.pixel_shuffle(y, r)?);
        }
        let eps = T::from_f64(cfg.bn_eps);
        for b in 0..cfg.decoder_blocks {
            let convs: Vec<Var> =
                ys.iter().map(|&y| self.conv(g, y, &format!("decoder.block{b}.conv"))).collect::<Result<_>>()?;
            let scale = self.p(&format!("decoder.block{b}.bn.scale"))?;
            let shift = self.p(&format!("decoder.block{b}.bn.shift"))?;
            let normed: Vec<Var> = match self.phase {
                Phase::Train => {
                    let stacked = g.concat_rows(&convs)?;
                    let (n, stats) = g.batch_norm_train(stacked, scale, shift, eps)?;
                    self.stats.push(stats);
                    let mut top = 0;
                    let mut out = Vec::with_capacity(convs.len());
                    for &c in &convs {
                        let (h, w, _) = g.value(c).hwc()?;
                        out.push(g.crop(n, top, 0, h, w)?);
                        top += h;
                    }
                    out
                }
                Phase::Infer => {
                    let rs = &self.model.running[b];
                    convs
                        .iter()
                        .map(|&c| g.batch_norm_infer(c, scale, shift, &rs.mean, &rs.var, eps))
                        .collect::<Result<_>>()?
                }
            };
            ys = normed.iter().map(|&n| self.act(g, n, &format!("decoder.block{b}.act"))).collect::<Result<_>>()?;
        }
        let mut out = Vec::with_capacity(ys.len());
        for y in ys {
            let y = self.conv(g, y, "decoder.proj")?;
            let (h, w, _) = g.value(y).hwc()?;
            out.push(if (h, w) == (cfg.h, cfg.w) { y } else { g.resize_bilinear(y, cfg.h, cfg.w)? });
        }
        Ok(out)
    }

    /// Multi-temporal branch for a batch of frame stacks.
    pub fn mtif(&mut self, g: &mut Graph<T>, stacks: &[Vec<Var>]) -> Result<Vec<Var>> {
        let cfg = &self.model.config;
        match cfg.mtif {
            MtifMode::BilinearFrame0 => stacks
                .iter()
                .map(|s| {
                    let f0 = *s.first().ok_or_else(|| Error::Empty(String::from("empty frame stack")))?;
                    g.resize_bilinear(f0, cfg.h, cfg.w)
                })
                .collect(),
            MtifMode::Learned => {
                let mut fused = Vec::with_capacity(stacks.len());
                for s in stacks {
                    let feats: Vec<Var> = s.iter().map(|&f| self.encode(g, f)).collect::<Result<_>>()?;
                    fused.push(self.misr(g, &feats)?);
                }
                self.decode(g, &fused)
            }
        }
    }

    pub fn msif(&self, g: &mut Graph<T>, sr_mtif: Var, pan: Var) -> Result<Var> {
        let (h, w, _) = g.value(sr_mtif).hwc()?;
        let (ph, pw, pc) = g.value(pan).hwc()?;
        if (h, w) != (ph, pw) || pc != 1 {
            return Err(shape_err!("pan {ph}x{pw}x{pc} not aligned with upsampled image {h}x{w}"));
        }
        let x = g.concat_channels(&[sr_mtif, pan])?;
        let x = self.conv(g, x, "sharpen.conv1")?;
        let x = self.act(g, x, "sharpen.act1")?;
        let x = self.conv(g, x, "sharpen.conv2")?;
        let x = self.act(g, x, "sharpen.act2")?;
        let x = self.conv(g, x, "sharpen.conv3")?;
        match self.model.config.sharpen_plugin {
            SharpenPlugin::Direct => Ok(x),
            SharpenPlugin::Residual => g.add(sr_mtif, x),
        }
    }

    pub fn compose(&self, g: &mut Graph<T>, sr_mtif: Var, sr_msif: Var) -> Result<Var> {
        let s = g.add(sr_mtif, sr_msif)?;
        if !self.model.config.compose_adjust {
            return Ok(s);
        }
        let x = self.conv(g, s, "compose.conv1")?;
        let x = g.relu(x);
        self.conv(g, x, "compose.conv2")
    }

    /// Full network on a batch of `(frames, pan)` scenes; returns raw outputs.
    pub fn scenes(&mut self, g: &mut Graph<T>, batch: &[(Vec<Var>, Var)]) -> Result<Vec<Var>> {
        let stacks: Vec<Vec<Var>> = batch.iter().map(|(f, _)| f.clone()).collect();
        let mtif = self.mtif(g, &stacks)?;
        let mut out = Vec::with_capacity(batch.len());
        for (&m, (_, pan)) in mtif.iter().zip(batch) {
            let s = self.msif(g, m, *pan)?;
            out.push(self.compose(g, m, s)?);
        }
        Ok(out)
    }
}
