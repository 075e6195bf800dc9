//! Central finite-difference checks of every differentiable operation and loss term,
//! shared by the core test suite and the acceptance run.

use rand::Rng;
use satfusion_core::graph::{Graph, Var};
use satfusion_core::loss::{self, LossConfig, ShiftSearchSpec};
use satfusion_core::metrics::SsimParams;
use satfusion_core::model::{FusionConfig, FusionModel, MisrPlugin, Phase, SharpenPlugin};
use satfusion_core::{rng, Shape, Tensor};

const SEEDS: u64 = 10;
const TOL: f64 = 1e-3;
const STEP: f64 = 1e-6;

fn random(r: &mut rng::Rng, dims: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let shape = Shape::new(dims).unwrap();
    Tensor::from_vec(shape, (0..shape.numel()).map(|_| lo + (hi - lo) * r.random::<f64>()).collect()).unwrap()
}

/// Values bounded away from zero, so kinks of abs / relu / prelu are not straddled.
fn signed(r: &mut rng::Rng, dims: &[usize]) -> Tensor<f64> {
    random(r, dims, 0.1, 1.0).map(|v| if r_sign(v) { v } else { -v })
}

fn r_sign(v: f64) -> bool {
    ((v * 1e6) as u64) % 2 == 0
}

/// Reduces `out` to a scalar through fixed random weights, so every output element matters.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    if g.value(out).len() == 1 {
        return out;
    }
    let mut r = rng::stream(seed, 99);
    let w = random(&mut r, g.value(out).dims(), -1.0, 1.0);
    let wv = g.constant(w);
    let p = g.mul(out, wv).unwrap();
    g.mean_all(p)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Compares analytic and numeric gradients with respect to every input.
fn check(name: &str, seed: u64, inputs: &[Tensor<f64>], f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) {
    let eval = |xs: &[Tensor<f64>]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let out = f(&mut g, &vars);
        let l = project(&mut g, out, seed);
        g.value(l).item().unwrap()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|x| g.input(x.clone())).collect();
    let out = f(&mut g, &vars);
    let l = project(&mut g, out, seed);
    g.backward(l).unwrap();
    let mut total = 0.0;
    for (k, v) in vars.iter().enumerate() {
        let analytic = g.grad(*v).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * STEP));
        }
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
        let scale = norm(&analytic).max(norm(&numeric));
        total += scale;
        let rel = if scale > 0.0 { norm(&diff) / scale } else { 0.0 };
        assert!(rel < TOL, "{name} seed {seed} input {k}: relative error {rel:e}");
    }
    assert!(total > 1e-9, "{name} seed {seed}: gradient vanished");
}

fn each_seed(name: &str, mut make: impl FnMut(&mut rng::Rng) -> Vec<Tensor<f64>>, f: &dyn Fn(&mut Graph<f64>, &[Var]) -> Var) {
    for seed in 0..SEEDS {
        let mut r = rng::stream(seed, 1);
        let inputs = make(&mut r);
        check(name, seed, &inputs, f);
    }
}

pub fn conv2d() {
    for (stride, padding, k) in [(1, 1, 3), (2, 0, 3), (1, 0, 1), (2, 2, 5)] {
        each_seed(
            "conv2d",
            |r| vec![signed(r, &[6, 6, 3]), signed(r, &[k, k, 3, 2]), signed(r, &[2])],
            &|g, v| g.conv2d(v[0], v[1], Some(v[2]), stride, padding).unwrap(),
        );
    }
    each_seed("conv2d_nobias", |r| vec![signed(r, &[6, 6, 2]), signed(r, &[3, 3, 2, 4])], &|g, v| {
        g.conv2d(v[0], v[1], None, 1, 1).unwrap()
    });
}

pub fn activations() {
    each_seed("prelu", |r| vec![signed(r, &[6, 6, 3]), random(r, &[3], 0.05, 0.5)], &|g, v| g.prelu(v[0], v[1]).unwrap());
    each_seed("relu", |r| vec![signed(r, &[6, 6, 3])], &|g, v| g.relu(v[0]));
    each_seed("abs", |r| vec![signed(r, &[6, 6, 4])], &|g, v| g.abs(v[0]));
}

pub fn batch_norm() {
    each_seed(
        "batch_norm_train",
        |r| vec![random(r, &[6, 6, 3], -1.0, 1.0), random(r, &[3], 0.5, 1.5), random(r, &[3], -0.5, 0.5)],
        &|g, v| g.batch_norm_train(v[0], v[1], v[2], 1e-5).unwrap().0,
    );
    each_seed(
        "batch_norm_infer",
        |r| vec![random(r, &[6, 6, 3], -1.0, 1.0), random(r, &[3], 0.5, 1.5), random(r, &[3], -0.5, 0.5)],
        &|g, v| g.batch_norm_infer(v[0], v[1], v[2], &[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0], 1e-5).unwrap(),
    );
}

pub fn resampling() {
    each_seed("pixel_shuffle", |r| vec![random(r, &[3, 3, 4], -1.0, 1.0)], &|g, v| g.pixel_shuffle(v[0], 2).unwrap());
    for (h, w) in [(11, 9), (4, 4), (6, 6), (1, 3)] {
        each_seed("resize_bilinear", |r| vec![random(r, &[6, 6, 2], -1.0, 1.0)], &|g, v| g.resize_bilinear(v[0], h, w).unwrap());
    }
}

pub fn arithmetic() {
    let pair = |r: &mut rng::Rng| vec![random(r, &[6, 6, 3], -1.0, 1.0), random(r, &[6, 6, 3], 0.5, 1.5)];
    each_seed("add", pair, &|g, v| g.add(v[0], v[1]).unwrap());
    each_seed("sub", pair, &|g, v| g.sub(v[0], v[1]).unwrap());
    each_seed("mul", pair, &|g, v| g.mul(v[0], v[1]).unwrap());
    each_seed("div", pair, &|g, v| g.div(v[0], v[1]).unwrap());
    each_seed("scale", |r| vec![random(r, &[6, 6, 3], -1.0, 1.0)], &|g, v| g.scale(v[0], -2.5));
    each_seed("add_scalar", |r| vec![random(r, &[6, 6, 3], -1.0, 1.0)], &|g, v| g.add_scalar(v[0], 0.7));
    each_seed("square", |r| vec![random(r, &[6, 6, 3], -1.0, 1.0)], &|g, v| g.square(v[0]));
}

pub fn structural() {
    each_seed(
        "concat_channels",
        |r| vec![random(r, &[6, 6, 1], -1.0, 1.0), random(r, &[6, 6, 3], -1.0, 1.0)],
        &|g, v| g.concat_channels(&[v[0], v[1]]).unwrap(),
    );
    each_seed(
        "concat_rows",
        |r| vec![random(r, &[2, 6, 2], -1.0, 1.0), random(r, &[4, 6, 2], -1.0, 1.0)],
        &|g, v| g.concat_rows(&[v[0], v[1]]).unwrap(),
    );
    each_seed("crop", |r| vec![random(r, &[6, 6, 2], -1.0, 1.0)], &|g, v| g.crop(v[0], 1, 2, 4, 3).unwrap());
    each_seed(
        "mean_stack",
        |r| (0..3).map(|_| random(r, &[6, 6, 2], -1.0, 1.0)).collect(),
        &|g, v| g.mean_stack(v).unwrap(),
    );
    each_seed("channel_mean", |r| vec![random(r, &[6, 6, 3], -1.0, 1.0)], &|g, v| g.channel_mean(v[0]).unwrap());
    each_seed(
        "add_channel_bias",
        |r| vec![random(r, &[6, 6, 3], -1.0, 1.0), random(r, &[1, 1, 3], -1.0, 1.0)],
        &|g, v| g.add_channel_bias(v[0], v[1]).unwrap(),
    );
    each_seed("mean_all", |r| vec![random(r, &[6, 6, 3], -1.0, 1.0)], &|g, v| g.mean_all(v[0]));
    each_seed(
        "min_of",
        |r| (0..4).map(|_| random(r, &[1], -1.0, 1.0).reshape(Shape::scalar()).unwrap()).collect(),
        &|g, v| g.min_of(v).unwrap(),
    );
}

pub fn filtering_and_angles() {
    let win: Tensor<f64> = satfusion_core::ops::gaussian_window(3, 1.0).unwrap();
    each_seed("filter_valid", |r| vec![random(r, &[6, 6, 2], -1.0, 1.0)], &|g, v| g.filter_valid(v[0], &win).unwrap());
    each_seed(
        "spectral_angle",
        |r| vec![random(r, &[6, 6, 4], 0.1, 1.0), random(r, &[6, 6, 4], 0.1, 1.0)],
        &|g, v| g.spectral_angle(v[0], v[1]).unwrap(),
    );
}

fn small_ssim() -> SsimParams {
    SsimParams { window: 3, sigma: 1.0, ..SsimParams::default() }
}

fn images(r: &mut rng::Rng) -> Vec<Tensor<f64>> {
    vec![random(r, &[6, 6, 3], 0.05, 0.95), random(r, &[6, 6, 3], 0.05, 0.95)]
}

pub fn loss_terms() {
    each_seed("mae", images, &|g, v| loss::mae_graph(g, v[0], v[1]).unwrap());
    each_seed("mse", images, &|g, v| loss::mse_graph(g, v[0], v[1]).unwrap());
    each_seed("ssim", images, &|g, v| loss::ssim_graph(g, v[0], v[1], &small_ssim()).unwrap());
    each_seed("sam", images, &|g, v| loss::sam_graph(g, v[0], v[1]).unwrap());
    let cfg = LossConfig { ssim: small_ssim(), ..LossConfig::default() };
    each_seed("composite", images, &|g, v| loss::composite_loss_graph(g, v[0], v[1], &cfg).unwrap());
    let bc = LossConfig { brightness_correct: true, ..cfg.clone() };
    each_seed("brightness_composite", images, &|g, v| loss::composite_loss_graph(g, v[0], v[1], &bc).unwrap());
    each_seed("brightness_compensate", images, &|g, v| loss::brightness_compensate_graph(g, v[0], v[1]).unwrap());
}

pub fn min_shift_loss() {
    let spec = ShiftSearchSpec { p_x: 1, step: 0.5, a: 1 };
    let cfg = LossConfig { ssim: SsimParams { window: 1, sigma: 1.0, ..SsimParams::default() }, ..LossConfig::default() };
    for seed in 0..SEEDS {
        let mut r = rng::stream(seed, 1);
        let gt = random(&mut r, &[6, 6, 3], 0.05, 0.95);
        let sr = random(&mut r, &[6, 6, 3], 0.05, 0.95);
        check("min_shift", seed, &[sr], &|g, v| loss::min_shift_loss_graph(g, v[0], &gt, &cfg, &spec).unwrap().loss);
    }
}

fn model_check(name: &str, cfg: FusionConfig, probes: &[&str]) {
    let (lh, lw) = cfg.lr_dims();
    let loss_cfg = LossConfig { ssim: small_ssim(), ..LossConfig::default() };
    for seed in 0..SEEDS {
        let mut r = rng::stream(seed, 5);
        let frames: Vec<Tensor<f64>> = (0..cfg.frames).map(|_| random(&mut r, &[lh, lw, cfg.c_ms], 0.0, 1.0)).collect();
        let pan = random(&mut r, &[cfg.h, cfg.w, 1], 0.0, 1.0);
        let gt = random(&mut r, &[cfg.h, cfg.w, cfg.c_ms], 0.0, 1.0);
        let model = FusionModel::<f64>::new(cfg.clone(), seed).unwrap();
        let loss_at = |m: &FusionModel<f64>| {
            let mut g = Graph::new();
            let mut fw = m.forward_on(&mut g, Phase::Train, true);
            let fs = frames.iter().map(|f| g.constant(f.clone())).collect();
            let p = g.constant(pan.clone());
            let out = fw.scenes(&mut g, &[(fs, p)]).unwrap()[0];
            let t = g.constant(gt.clone());
            let l = loss::composite_loss_graph(&mut g, out, t, &loss_cfg).unwrap();
            (g, l)
        };
        let (mut g, l) = loss_at(&model);
        g.backward(l).unwrap();
        let mut store = model.params().clone();
        store.zero_grad();
        store.accumulate_grads(&g).unwrap();
        for probe in probes {
            let p = store.by_name(probe).unwrap_or_else(|| panic!("no parameter {probe}"));
            let analytic = p.grad.data().to_vec();
            let mut numeric = Vec::new();
            for i in 0..p.value.len() {
                let mut plus = model.clone();
                let mut t = p.value.clone();
                t.data_mut()[i] += STEP;
                plus.set_param(probe, t.clone()).unwrap();
                t.data_mut()[i] -= 2.0 * STEP;
                let mut minus = model.clone();
                minus.set_param(probe, t).unwrap();
                let (gp, lp) = loss_at(&plus);
                let (gm, lm) = loss_at(&minus);
                numeric.push((gp.value(lp).item().unwrap() - gm.value(lm).item().unwrap()) / (2.0 * STEP));
            }
            let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
            let scale = norm(&analytic).max(norm(&numeric));
            assert!(scale > 1e-12, "{name} seed {seed}: {probe} gradient vanished");
            let rel = norm(&diff) / scale;
            assert!(rel < TOL, "{name} seed {seed}: {probe} relative error {rel:e}");
        }
    }
}

pub fn model_end_to_end() {
    let mut cfg = FusionConfig::toy(6, 2, 2, 3, 2);
    cfg.c_misr = 4;
    model_check(
        "model_mean",
        cfg.clone(),
        &["encoder.conv1.bias", "misr.act.slope", "decoder.block0.bn.scale", "decoder.proj.bias", "sharpen.conv3.bias", "compose.conv1.bias"],
    );
    let srcnn = FusionConfig { misr_plugin: MisrPlugin::SrcnnStack, sharpen_plugin: SharpenPlugin::Direct, ..cfg };
    model_check("model_srcnn", srcnn, &["misr.conv3.bias", "decoder.conv_in.bias", "sharpen.act2.slope"]);
}

pub fn probed_encoder_weight_on_16px_scene() {
    let mut cfg = FusionConfig::toy(16, 2, 2, 3, 2);
    cfg.c_misr = 4;
    model_check("model_16px", cfg, &["encoder.conv1.weight"]);
}

/// Every check group, in a stable order.
pub const GROUPS: &[(&str, fn())] = &[
    ("conv2d", conv2d),
    ("activations", activations),
    ("batch_norm", batch_norm),
    ("resampling", resampling),
    ("arithmetic", arithmetic),
    ("structural", structural),
    ("filtering_and_angles", filtering_and_angles),
    ("loss_terms", loss_terms),
    ("min_shift_loss", min_shift_loss),
    ("model_end_to_end", model_end_to_end),
    ("probed_encoder_weight_on_16px_scene", probed_encoder_weight_on_16px_scene),
];
