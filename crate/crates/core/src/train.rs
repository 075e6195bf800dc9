//! Training, evaluation, sweeps and ablations.
//!
//! Every run is a pure function of its configuration, data and seed: scene
//! order comes from a seeded stream per epoch, parameter initialization from
//! the init stream, and all reductions have a fixed order.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::graph::{Graph, Var};
use crate::loss::{self, LossConfig};
use crate::metrics::{MetricReport, MetricRow};
use crate::model::{Forward, FusionConfig, FusionModel, Fuser, Phase};
use crate::ops;
use crate::optim::{self, Method};
use crate::rng;
use crate::tensor::Tensor;
use crate::wald::{self, BaseScene, Scene, SceneSet, SetConfig, Split};

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub fusion: FusionConfig,
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Method,
    pub lr: f64,
    pub seed: u64,
    /// Validate every this many epochs; the last epoch is always validated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            fusion: FusionConfig::default(),
            loss: LossConfig::default(),
            epochs: 20,
            batch_size: 16,
            optimizer: Method::default(),
            lr: 5e-4,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(param_err!("epochs and batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(param_err!("learning rate must be finite and >= 0, got {}", self.lr));
        }
        self.fusion.validate()?;
        self.loss.effective_weights()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    /// Mean training objective over the validation scenes.
    pub loss: f64,
    pub report: MetricReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    /// Index into [`TrainHistory::evals`].
    pub eval_index: usize,
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub best: BestCheckpoint,
    /// Split the validation records were computed on.
    pub val_split: Split,
}

/// Outcome of [`train`].
#[derive(Clone, Debug)]
pub struct TrainRun {
    /// Parameters at the best validation epoch.
    pub best: FusionModel<f32>,
    /// Parameters after the last step.
    pub last: FusionModel<f32>,
    pub history: TrainHistory,
}

/// Model and baseline metrics on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub split: Split,
    pub model: MetricReport,
    /// Bilinear upsampling of the first frame.
    pub baseline: MetricReport,
}

fn frames_of<'a>(scene: &'a Scene, t: usize) -> Result<&'a [Tensor<f32>]> {
    if t > scene.lrms.len() {
        return Err(param_err!("model needs {t} frames, scene {} has {}", scene.meta.source_id, scene.lrms.len()));
    }
    Ok(&scene.lrms[..t])
}

/// Graph inputs for a batch of scenes.
fn bind_scenes(g: &mut Graph<f32>, scenes: &[&Scene], t: usize) -> Result<Vec<(Vec<Var>, Var)>> {
    scenes
        .iter()
        .map(|s| {
            let frames = frames_of(s, t)?.iter().map(|f| g.constant(f.clone())).collect();
            Ok((frames, g.constant(s.pan.clone())))
        })
        .collect()
}

/// Mean training objective of `scenes` under `model` in the inference phase.
pub fn objective(model: &FusionModel<f32>, scenes: &[&Scene], loss_cfg: &LossConfig) -> Result<f64> {
    if scenes.is_empty() {
        return Err(Error::Empty(String::from("no scenes to score")));
    }
    let mut total = 0.0;
    for s in scenes {
        let sr = model.forward(frames_of(s, model.config().frames)?, &s.pan)?;
        total += loss::training_loss(&sr, &s.gt, loss_cfg)?;
    }
    Ok(total / scenes.len() as f64)
}

fn batch_step(model: &mut FusionModel<f32>, batch: &[&Scene], cfg: &TrainConfig) -> Result<f64> {
    let mut g = Graph::new();
    let (loss_var, stats) = {
        let mut fw: Forward<'_, f32> = model.forward_on(&mut g, Phase::Train, true);
        let inputs = bind_scenes(&mut g, batch, cfg.fusion.frames)?;
        let outs = fw.scenes(&mut g, &inputs)?;
        let mut total: Option<Var> = None;
        for (&sr, s) in outs.iter().zip(batch) {
            let l = loss::training_loss_graph(&mut g, sr, &s.gt, &cfg.loss)?;
            total = Some(match total {
                Some(t) => g.add(t, l)?,
                None => l,
            });
        }
        let total = total.ok_or_else(|| Error::Empty(String::from("empty batch")))?;
        (g.scale(total, 1.0 / batch.len() as f32), core::mem::take(&mut fw.stats))
    };
    let value = g.value(loss_var).item()? as f64;
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("training loss became {value}")));
    }
    g.backward(loss_var)?;
    model.params_mut().zero_grad();
    model.params_mut().accumulate_grads(&g)?;
    optim::optimizer_step(model.params_mut(), cfg.optimizer, cfg.lr)?;
    model.update_running(&stats)?;
    Ok(value)
}

/// Split scored for model selection: validation, or training when there is none.
fn selection_split(data: &SceneSet) -> Split {
    if data.indices(Split::Val).is_empty() {
        Split::Train
    } else {
        Split::Val
    }
}

/// Split reported by sweeps: test, else validation, else training.
pub fn report_split(data: &SceneSet) -> Split {
    [Split::Test, Split::Val].into_iter().find(|&s| !data.indices(s).is_empty()).unwrap_or(Split::Train)
}

/// Trains a freshly initialized model on the training split of `data`.
pub fn train(cfg: &TrainConfig, data: &SceneSet) -> Result<TrainRun> {
    let model = FusionModel::new(cfg.fusion.clone(), cfg.seed)?;
    train_from(cfg, data, model)
}

/// Continues training `model`.
pub fn train_from(cfg: &TrainConfig, data: &SceneSet, mut model: FusionModel<f32>) -> Result<TrainRun> {
    cfg.validate()?;
    let train_idx = data.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::Empty(String::from("training split is empty")));
    }
    let val_split = selection_split(data);
    let val = data.split(val_split);
    let mut steps = Vec::new();
    let mut evals: Vec<EvalRecord> = Vec::new();
    let mut best: Option<(BestCheckpoint, FusionModel<f32>)> = None;
    for epoch in 0..cfg.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut rng::stream(rng::derive_seed(cfg.seed, rng::domain::SHUFFLE, epoch as u64), 0));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Scene> = chunk.iter().map(|&i| &data.scenes[i]).collect();
            let loss = batch_step(&mut model, &batch, cfg)?;
            log::debug!("epoch {epoch} step {} loss {loss:.6}", steps.len());
            steps.push(StepRecord { step: steps.len(), epoch, loss });
        }
        let last = epoch + 1 == cfg.epochs;
        if last || (cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0) {
            let loss = objective(&model, &val, &cfg.loss)?;
            let report = evaluate_scenes(&model, &val)?;
            log::info!("epoch {epoch}: {val_split:?} loss {loss:.6}, psnr {:.3}", report.aggregate.psnr);
            let better = best.as_ref().is_none_or(|(b, _)| loss < b.loss);
            if better {
                best = Some((BestCheckpoint { eval_index: evals.len(), epoch, loss }, model.clone()));
            }
            evals.push(EvalRecord { epoch, loss, report });
        }
    }
    let (best, best_model) = best.ok_or_else(|| Error::Empty(String::from("no validation record")))?;
    Ok(TrainRun { best: best_model, last: model, history: TrainHistory { steps, evals, best, val_split } })
}

fn evaluate_scenes<F: Fuser>(model: &F, scenes: &[&Scene]) -> Result<MetricReport> {
    let rows = scenes
        .iter()
        .map(|s| {
            let sr = model.fuse_scene(&s.lrms, &s.pan)?;
            MetricRow::compute(s.meta.source_id.clone(), &sr, &s.gt, s.meta.gamma)
        })
        .collect::<Result<Vec<_>>>()?;
    MetricReport::from_rows(rows)
}

/// Bilinear upsampling of the first frame to the ground-truth grid.
pub fn baseline_upsample(scene: &Scene) -> Result<Tensor<f32>> {
    let (h, w, _) = scene.gt.hwc()?;
    let f0 = scene.lrms.first().ok_or_else(|| Error::Empty(String::from("scene without frames")))?;
    ops::resize_bilinear(f0, h, w)
}

/// Metrics of `model` and of the first-frame baseline on one split.
pub fn evaluate<F: Fuser>(model: &F, data: &SceneSet, split: Split) -> Result<EvalReport> {
    let scenes = data.split(split);
    if scenes.is_empty() {
        return Err(Error::Empty(format!("{split:?} split is empty")));
    }
    let baseline = scenes
        .iter()
        .map(|s| MetricRow::compute(s.meta.source_id.clone(), &baseline_upsample(s)?, &s.gt, s.meta.gamma))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { split, model: evaluate_scenes(model, &scenes)?, baseline: MetricReport::from_rows(baseline)? })
}

/// One setting of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub value: f64,
    pub report: EvalReport,
}

fn train_and_report(cfg: &TrainConfig, data: &SceneSet) -> Result<EvalReport> {
    let run = train(cfg, data)?;
    evaluate(&run.best, data, report_split(data))
}

/// `fusion` with its image geometry (size, bands, gamma, frame size and count) taken from `set`.
pub fn fit_geometry(fusion: &FusionConfig, set: &SceneSet) -> Result<FusionConfig> {
    let s = set.scenes.first().ok_or_else(|| Error::Empty(String::from("empty scene set")))?;
    let (h, w, c) = s.gt.hwc()?;
    let (lh, lw, _) = s.lrms[0].hwc()?;
    let frames = set.scenes.iter().map(|s| s.lrms.len()).min().unwrap_or(0);
    Ok(FusionConfig { h, w, c_ms: c, gamma: s.meta.gamma, frames, lr_size: Some((lh, lw)), ..fusion.clone() })
}

/// Trains and evaluates once per perturbation intensity; scenes share `set.seed`.
pub fn epsilon_sweep(cfg: &TrainConfig, bases: &[BaseScene], set: &SetConfig, epsilons: &[f64]) -> Result<Vec<SweepRow>> {
    if epsilons.is_empty() {
        return Err(param_err!("epsilon list is empty"));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e >= 0.0)) {
        return Err(param_err!("epsilon must be >= 0, got {e}"));
    }
    epsilons
        .iter()
        .map(|&eps| {
            let data = wald::synthesize_set(bases, &SetConfig { epsilon: eps, ..set.clone() })?;
            let c = TrainConfig { fusion: fit_geometry(&cfg.fusion, &data)?, ..cfg.clone() };
            Ok(SweepRow { label: format!("epsilon={eps}"), value: eps, report: train_and_report(&c, &data)? })
        })
        .collect()
}

/// Trains and evaluates once per frame count, using the first `T` frames of each scene.
pub fn sweep_t(cfg: &TrainConfig, data: &SceneSet, ts: &[usize]) -> Result<Vec<SweepRow>> {
    if ts.is_empty() {
        return Err(param_err!("frame-count list is empty"));
    }
    let available = data.scenes.iter().map(|s| s.lrms.len()).min().unwrap_or(0);
    if let Some(t) = ts.iter().find(|&&t| t == 0 || t > available) {
        return Err(param_err!("frame count {t} outside 1..={available}"));
    }
    ts.iter()
        .map(|&t| {
            let scenes = data.scenes.iter().map(|s| s.with_frames(t)).collect::<Result<Vec<_>>>()?;
            let subset = SceneSet::new(scenes, data.splits.clone())?;
            let c = TrainConfig { fusion: FusionConfig { frames: t, ..cfg.fusion.clone() }, ..cfg.clone() };
            Ok(SweepRow { label: format!("T={t}"), value: t as f64, report: train_and_report(&c, &subset)? })
        })
        .collect()
}

/// Trains and evaluates once per upscale factor.
pub fn sweep_gamma(cfg: &TrainConfig, bases: &[BaseScene], set: &SetConfig, gammas: &[usize]) -> Result<Vec<SweepRow>> {
    if gammas.is_empty() {
        return Err(param_err!("gamma list is empty"));
    }
    gammas
        .iter()
        .map(|&gamma| {
            let data = wald::synthesize_set(bases, &SetConfig { gamma, ..set.clone() })?;
            let c = TrainConfig { fusion: fit_geometry(&FusionConfig { shuffle_r: None, ..cfg.fusion.clone() }, &data)?, ..cfg.clone() };
            Ok(SweepRow { label: format!("gamma={gamma}"), value: gamma as f64, report: train_and_report(&c, &data)? })
        })
        .collect()
}

/// One ablation switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Toggle {
    /// Disable a loss term by index into [`loss::TERM_NAMES`].
    NoTerm(usize),
    NoAdjust,
}

impl Toggle {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "no-adjust" {
            return Ok(Toggle::NoAdjust);
        }
        s.strip_prefix("no-")
            .and_then(|t| loss::TERM_NAMES.iter().position(|n| *n == t))
            .map(Toggle::NoTerm)
            .ok_or_else(|| Error::Usage(format!("unknown toggle {s:?}")))
    }

    fn apply(self, cfg: &mut TrainConfig) {
        match self {
            Toggle::NoTerm(i) => cfg.loss.enabled[i] = false,
            Toggle::NoAdjust => cfg.fusion.compose_adjust = false,
        }
    }
}

/// A named combination of toggles such as `no-ssim+no-sam`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub toggles: Vec<Toggle>,
}

impl Variant {
    pub fn parse(spec: &str) -> Result<Self> {
        let toggles = spec.split('+').map(Toggle::parse).collect::<Result<Vec<_>>>()?;
        Ok(Variant { name: spec.trim().to_string(), toggles })
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        self.toggles.iter().for_each(|t| t.apply(&mut c));
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub loss_weights: [f64; 4],
    pub compose_adjust: bool,
    pub parameter_count: usize,
    pub report: EvalReport,
}

/// Trains the baseline and every variant with the same seed, baseline first.
pub fn run_ablation(cfg: &TrainConfig, data: &SceneSet, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    if variants.is_empty() {
        return Err(Error::Usage(String::from("ablation needs at least one toggle")));
    }
    let mut configs = Vec::with_capacity(variants.len() + 1);
    configs.push((String::from("baseline"), cfg.clone()));
    for v in variants {
        let c = v.apply(cfg);
        if c == *cfg {
            return Err(Error::Usage(format!("variant {} does not differ from the baseline", v.name)));
        }
        configs.push((v.name.clone(), c));
    }
    configs
        .into_iter()
        .map(|(name, c)| {
            let run = train(&c, data)?;
            Ok(AblationRow {
                variant: name,
                loss_weights: c.loss.effective_weights()?,
                compose_adjust: c.fusion.compose_adjust,
                parameter_count: run.best.params().numel(),
                report: evaluate(&run.best, data, report_split(data))?,
            })
        })
        .collect()
}
