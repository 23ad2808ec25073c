//! Registered finite-difference suites, grouped by scope.
//!
//! Every suite builds a scalar from random binary64 parameters, contracting
//! non-scalar outputs with a random weight tensor so that each output
//! coordinate carries a distinct sensitivity, and compares the tape gradient
//! against central differences.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsfcn_tensor::gradcheck::FdOptions;
use wsfcn_tensor::ops::Pointwise;
use wsfcn_tensor::{
    finite_diff_check_with, BnStats, Conv2dSpec, DType, FdReport, ParamStore, PoolMode, Shape, Tape,
    Tensor, Var,
};

use crate::error::{Error, Result};
use crate::fca::{self, FcaConfig};
use crate::loss::{classification_loss, segmentation_loss, segmentation_loss_on_probs};
use crate::model::{backbone_forward, forward_vars, init_params, ModelConfig, Variant, IGNORE};
use crate::nn::{Ctx, Init};
use crate::pamr::{pamr_tape, PamrConfig};
use crate::sf2;

pub const EPS: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
pub const KINK_THRESHOLD: f64 = 1e-3;
pub const SCOPES: [&str; 5] = ["all", "tensor", "fca", "sf2", "segnet"];

pub struct Suite {
    pub scope: &'static str,
    pub name: &'static str,
    pub run: fn(u64) -> Result<FdReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub scope: &'static str,
    pub name: &'static str,
    pub seeds: u64,
    pub max_rel_error: f64,
    pub coords_checked: usize,
    pub kinks: usize,
    pub elapsed: Duration,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }

    pub fn to_line(&self) -> String {
        format!(
            "{} {}.{}: max rel error {:.3e} over {} coords ({} at kinks), {} seeds ({:.2}s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.scope,
            self.name,
            self.max_rel_error,
            self.coords_checked,
            self.kinks,
            self.seeds,
            self.elapsed.as_secs_f64()
        )
    }
}

fn rng(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(salt);
    r
}

fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w).expect("valid test shape")
}

fn randn(s: Shape, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(s, DType::F64, 1.0, r)
}

/// Random signs with magnitudes in `[0.5, 1.5]`.
fn signed_weights(s: Shape, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(s, DType::F64, |_, _, _, _| {
        let m = r.gen_range(0.5..1.5);
        if r.gen_bool(0.5) { m } else { -m }
    })
}

/// Nonnegative feature maps like the outputs of a ReLU block.
fn features(s: Shape, r: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(s, DType::F64, 0.05, 0.5, r)
}

/// Standard normal values pushed at least 0.1 away from zero (ReLU kink).
fn randn_off_zero(s: Shape, r: &mut ChaCha8Rng) -> Tensor {
    randn(s, r).map(|v| if v.abs() < 0.1 { v.signum() * 0.1 + v } else { v })
}

fn fd<F>(store: &mut ParamStore, seed: u64, max_coords: Option<usize>, loss: F) -> Result<FdReport>
where
    F: Fn(&ParamStore, &mut Tape) -> wsfcn_tensor::Result<Var>,
{
    let opts = FdOptions {
        eps: EPS,
        max_coords_per_param: max_coords,
        seed,
        kink_threshold: Some(KINK_THRESHOLD),
    };
    Ok(finite_diff_check_with(loss, store, &opts)?)
}

/// Registers `inputs`, applies `op` and checks a random weighted sum of its
/// output over every coordinate.
fn check_op<F>(seed: u64, inputs: Vec<(&str, Tensor)>, op: F) -> Result<FdReport>
where
    F: Fn(&mut Tape, &[Var]) -> wsfcn_tensor::Result<Var>,
{
    let mut store = ParamStore::new();
    let names: Vec<String> = inputs.iter().map(|(n, _)| n.to_string()).collect();
    for (name, t) in inputs {
        store.insert(name, t, 1.0)?;
    }
    let build = |s: &ParamStore, t: &mut Tape| -> wsfcn_tensor::Result<Var> {
        let vars = names.iter().map(|n| t.param(s, n)).collect::<wsfcn_tensor::Result<Vec<_>>>()?;
        op(t, &vars)
    };
    let out_shape = {
        let mut t = Tape::new();
        let v = build(&store, &mut t)?;
        t.value(v).shape()
    };
    let weights = signed_weights(out_shape, &mut rng(seed, 99));
    fd(&mut store, seed, None, |s, t| {
        let v = build(s, t)?;
        t.weighted_sum(v, &weights)
    })
}

/// Random coordinate in `[0, size - 1]` away from integer kinks.
fn smooth_coord(size: usize, r: &mut ChaCha8Rng) -> f64 {
    r.gen_range(0..size - 1) as f64 + r.gen_range(0.05..0.95)
}

fn conv2d(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 1);
    let (kh, kw) = (r.gen_range(1..=3), r.gen_range(1..=3));
    let spec = Conv2dSpec::new(r.gen_range(1..=2), r.gen_range(0..=1), r.gen_range(0..=1), r.gen_range(1..=2));
    let x = randn(shape(2, 2, 6, 5), &mut r);
    let w = randn(shape(3, 2, kh, kw), &mut r);
    let b = randn(shape(3, 1, 1, 1), &mut r);
    check_op(seed, vec![("x", x), ("w", w), ("b", b)], |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), spec)?;
        t.sigmoid(y)
    })
}

fn pooling(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 2);
    let x = randn(shape(2, 3, 4, 3), &mut r);
    check_op(seed, vec![("x", x)], |t, v| {
        let a = t.global_pool_spatial(v[0], PoolMode::Avg)?;
        let m = t.global_pool_spatial(v[0], PoolMode::Max)?;
        let sp = t.add(a, m)?;
        let ca = t.global_pool_channel(v[0], PoolMode::Avg)?;
        let cm = t.global_pool_channel(v[0], PoolMode::Max)?;
        let ch = t.concat_channel(&[ca, cm])?;
        let s1 = t.sum(sp)?;
        let s2 = t.mean(ch)?;
        t.add(s1, s2)
    })
}

fn activations(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 3);
    let x = randn_off_zero(shape(2, 3, 3, 3), &mut r);
    check_op(seed, vec![("x", x)], |t, v| {
        let s = t.pointwise(v[0], Pointwise::Sigmoid)?;
        let q = t.pointwise(v[0], Pointwise::Relu)?;
        let y = t.concat_channel(&[s, q])?;
        t.softmax_channel(y)
    })
}

fn batchnorm(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 4);
    let x = randn(shape(2, 3, 3, 3), &mut r);
    let g = randn(shape(1, 3, 1, 1), &mut r);
    let b = randn(shape(1, 3, 1, 1), &mut r);
    let stats = BnStats {
        mean: randn(shape(1, 3, 1, 1), &mut r),
        var: Tensor::rand_uniform(shape(1, 3, 1, 1), DType::F64, 0.5, 2.0, &mut r),
    };
    check_op(seed, vec![("x", x), ("g", g), ("b", b)], |t, v| {
        let (train, _) = t.batchnorm(v[0], v[1], v[2], &stats, true)?;
        let (eval, _) = t.batchnorm(v[0], v[1], v[2], &stats, false)?;
        t.concat_channel(&[train, eval])
    })
}

fn elementwise(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 5);
    let x = signed_weights(shape(2, 3, 3, 4), &mut r);
    let gc = signed_weights(shape(2, 3, 1, 1), &mut r);
    let gs = signed_weights(shape(2, 1, 3, 4), &mut r);
    let y = signed_weights(shape(2, 3, 3, 4), &mut r);
    check_op(seed, vec![("x", x), ("gc", gc), ("gs", gs), ("y", y)], |t, v| {
        let a = t.broadcast_mul(v[0], v[1])?;
        let b = t.broadcast_mul(a, v[2])?;
        let c = t.broadcast_mul(b, v[3])?;
        let d = t.sub(c, v[3])?;
        let pos = t.sigmoid(v[3])?;
        let pos = t.add_scalar(pos, 0.5)?;
        let e = t.div(d, pos)?;
        let e = t.scale(e, 0.7)?;
        let s = t.slice_channels(e, 1, 3)?;
        t.add(s, s)
    })
}

fn resampling(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 6);
    let (h, w, s) = (r.gen_range(2..=4), r.gen_range(2..=4), r.gen_range(1..=3));
    let x = randn(shape(1, 2, h, w), &mut r);
    let off = Tensor::from_fn(shape(1, 2, h * s, w * s), DType::F64, |_, c, oy, ox| {
        let (p, size) = if c == 0 { (oy, h) } else { (ox, w) };
        (smooth_coord(size, &mut r) + 0.5) * s as f64 - 0.5 - p as f64
    });
    let pos = Tensor::from_fn(shape(1, 2, 3, 2), DType::F64, |_, c, _, _| {
        smooth_coord(if c == 0 { h } else { w }, &mut r)
    });
    let (oh, ow) = (h * 2, w + 1);
    check_op(seed, vec![("x", x), ("off", off), ("pos", pos)], |t, v| {
        let a = t.aligned_upsample(v[0], v[1], s)?;
        let g = t.grid_sample_bilinear(v[0], v[2])?;
        let u = t.bilinear_upsample(v[0], oh, ow)?;
        let (sa, sg, su) = (t.sum(a)?, t.sum(g)?, t.sum(u)?);
        let w1 = t.scale(sg, 0.3)?;
        let s1 = t.add(sa, w1)?;
        t.add(s1, su)
    })
}

fn losses(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 7);
    let scores = randn(shape(3, 4, 1, 1), &mut r);
    let labels = Tensor::from_fn(shape(3, 4, 1, 1), DType::F64, |_, _, _, _| r.gen_range(0..2) as f64);
    let logits = randn(shape(2, 4, 3, 3), &mut r);
    let map: Vec<u8> = (0..18)
        .map(|_| if r.gen_bool(0.2) { IGNORE } else { r.gen_range(0..4) })
        .collect();
    check_op(seed, vec![("s", scores), ("l", logits)], |t, v| {
        let a = t.bce_with_logits(v[0], &labels)?;
        let (b, _) = t.balanced_cross_entropy(v[1], &map, IGNORE)?;
        t.add(a, b)
    })
}

fn filtering(seed: u64) -> Result<FdReport> {
    let mut r = rng(seed, 8);
    let taps = [(0, 0), (-1, 0), (0, 2), (1, -1), (-2, -2)];
    let x = Tensor::rand_uniform(shape(2, 3, 4, 3), DType::F64, 0.2, 2.0, &mut r);
    let w = randn(shape(2, taps.len(), 4, 3), &mut r);
    check_op(seed, vec![("x", x), ("w", w)], |t, v| {
        let y = t.local_filter(v[0], v[1], &taps)?;
        let l = t.ln(v[0])?;
        t.concat_channel(&[y, l])
    })
}

/// Weighted sum of `v` with a fixed random tensor, added to `acc`.
fn contract(ctx: &mut Ctx<'_>, v: Var, seed: u64, salt: u64, acc: Option<Var>) -> wsfcn_tensor::Result<Var> {
    let w = signed_weights(ctx.value(v).shape(), &mut rng(seed, salt));
    let s = ctx.tape.weighted_sum(v, &w)?;
    match acc {
        Some(a) => ctx.tape.add(a, s),
        None => Ok(s),
    }
}

fn to_tensor_err(e: Error) -> wsfcn_tensor::TensorError {
    match e {
        Error::Tensor(t) => t,
        other => wsfcn_tensor::TensorError::invalid("gradcheck", other.to_string()),
    }
}

fn fca_forward(seed: u64) -> Result<FdReport> {
    let cfg = FcaConfig {
        kernel_sizes: vec![1, 3, 5, 7],
        in_channels: 3,
        branch_channels: 2,
        separate_attention: false,
    };
    let mut r = rng(seed, 20);
    let mut store = ParamStore::new();
    store.insert("input", features(shape(2, 3, 5, 6), &mut r), 1.0)?;
    fca::init(
        &mut Init {
            store: &mut store,
            rng: &mut r,
            dtype: DType::F64,
            lr_multiplier: 1.0,
        },
        &cfg,
    )?;
    fd(&mut store, seed, None, |s, t| {
        let mut ctx = Ctx::new(s, t, true);
        let x = ctx.param("input").map_err(to_tensor_err)?;
        let y = fca::fca_forward(&mut ctx, x, &cfg).map_err(to_tensor_err)?;
        contract(&mut ctx, y, seed, 21, None)
    })
}

fn sf2_fuse(seed: u64) -> Result<FdReport> {
    let d2 = 3;
    let mut r = rng(seed, 30);
    let mut store = ParamStore::new();
    store.insert("input.high", features(shape(2, d2, 3, 3), &mut r), 1.0)?;
    store.insert("input.low", features(shape(2, d2, 6, 6), &mut r), 1.0)?;
    sf2::init(
        &mut Init {
            store: &mut store,
            rng: &mut r,
            dtype: DType::F64,
            lr_multiplier: 1.0,
        },
        d2,
    )?;
    fd(&mut store, seed, None, |s, t| {
        let mut ctx = Ctx::new(s, t, true);
        let h = ctx.param("input.high").map_err(to_tensor_err)?;
        let l = ctx.param("input.low").map_err(to_tensor_err)?;
        let (hp, lp) = sf2::sf2_fuse(&mut ctx, h, l).map_err(to_tensor_err)?;
        let out = sf2::sf2_output(&mut ctx, hp, lp).map_err(to_tensor_err)?;
        let acc = contract(&mut ctx, hp, seed, 31, None)?;
        let acc = contract(&mut ctx, lp, seed, 32, Some(acc))?;
        contract(&mut ctx, out, seed, 33, Some(acc))
    })
}

/// Small model configuration used by the end-to-end suites.
pub fn tiny_model(variant: Variant) -> ModelConfig {
    ModelConfig {
        variant,
        classes: 3,
        d2: 4,
        pamr: PamrConfig {
            iterations: 2,
            dilations: vec![1, 2],
            temperature: 0.1,
        },
        ..ModelConfig::default()
    }
}

/// Coordinates sampled per parameter tensor in the end-to-end suites.
pub const MODEL_COORDS: usize = 3;

fn backbone(seed: u64) -> Result<FdReport> {
    let cfg = tiny_model(Variant::Sf2);
    let mut store = init_params(&cfg, seed, DType::F64)?;
    store.insert("input", randn(shape(2, 3, 16, 16), &mut rng(seed, 40)), 1.0)?;
    fd(&mut store, seed, Some(MODEL_COORDS), |s, t| {
        let mut ctx = Ctx::new(s, t, true);
        let x = ctx.param("input").map_err(to_tensor_err)?;
        let (fl, fx) = backbone_forward(&mut ctx, x).map_err(to_tensor_err)?;
        let acc = contract(&mut ctx, fl, seed, 41, None)?;
        contract(&mut ctx, fx, seed, 42, Some(acc))
    })
}

const MODEL_BATCH: usize = 4;

fn model_full(seed: u64) -> Result<FdReport> {
    let cfg = tiny_model(Variant::Full);
    let mut store = init_params(&cfg, seed, DType::F64)?;
    let mut r = rng(seed, 50);
    store.insert("input", randn(shape(MODEL_BATCH, 3, 16, 16), &mut r), 1.0)?;
    let labels = Tensor::from_fn(shape(MODEL_BATCH, 3, 1, 1), DType::F64, |n, c, _, _| ((n + c) % 2) as f64);
    let pseudo: Vec<u8> = (0..MODEL_BATCH * 4 * 4)
        .map(|_| if r.gen_bool(0.3) { IGNORE } else { r.gen_range(0..4) })
        .collect();
    fd(&mut store, seed, Some(MODEL_COORDS), |s, t| {
        let mut ctx = Ctx::new(s, t, true);
        let x = ctx.param("input").map_err(to_tensor_err)?;
        let vars = forward_vars(&mut ctx, x, &cfg, &mut rng(seed, 51)).map_err(to_tensor_err)?;
        let acc = contract(&mut ctx, vars.mask_logits, seed, 52, None)?;
        let acc = contract(&mut ctx, vars.class_scores, seed, 53, Some(acc))?;
        let cls = classification_loss(&mut ctx, vars.class_scores, &labels).map_err(to_tensor_err)?;
        let (seg, _) = segmentation_loss(&mut ctx, vars.mask_logits, &pseudo).map_err(to_tensor_err)?;
        let acc = ctx.tape.add(acc, cls)?;
        ctx.tape.add(acc, seg)
    })
}

fn refined_loss(seed: u64) -> Result<FdReport> {
    let cfg = tiny_model(Variant::Full);
    let mut r = rng(seed, 60);
    let image = randn(shape(1, 3, 16, 16), &mut r);
    let pseudo: Vec<u8> = (0..16)
        .map(|_| if r.gen_bool(0.3) { IGNORE } else { r.gen_range(0..4) })
        .collect();
    let mut store = ParamStore::new();
    store.insert("logits", randn(shape(1, 4, 4, 4), &mut r), 1.0)?;
    fd(&mut store, seed, None, |s, t| {
        let mut ctx = Ctx::new(s, t, true);
        let l = ctx.param("logits").map_err(to_tensor_err)?;
        let m = ctx.tape.softmax_channel(l)?;
        let refined = pamr_tape(&mut ctx, &image, m, &cfg.pamr).map_err(to_tensor_err)?;
        Ok(segmentation_loss_on_probs(&mut ctx, refined, &pseudo).map_err(to_tensor_err)?.0)
    })
}

pub fn suites() -> Vec<Suite> {
    vec![
        Suite { scope: "tensor", name: "conv2d", run: conv2d },
        Suite { scope: "tensor", name: "pooling", run: pooling },
        Suite { scope: "tensor", name: "activations", run: activations },
        Suite { scope: "tensor", name: "batchnorm", run: batchnorm },
        Suite { scope: "tensor", name: "elementwise", run: elementwise },
        Suite { scope: "tensor", name: "resampling", run: resampling },
        Suite { scope: "tensor", name: "losses", run: losses },
        Suite { scope: "tensor", name: "filtering", run: filtering },
        Suite { scope: "fca", name: "fca_forward", run: fca_forward },
        Suite { scope: "sf2", name: "sf2_fuse", run: sf2_fuse },
        Suite { scope: "segnet", name: "backbone", run: backbone },
        Suite { scope: "segnet", name: "model_full", run: model_full },
        Suite { scope: "segnet", name: "refined_loss", run: refined_loss },
    ]
}

/// Runs every suite in `scope` over `seeds` seeds.
pub fn run_gradcheck(scope: &str, seeds: u64, mut progress: impl FnMut(&SuiteResult)) -> Result<Vec<SuiteResult>> {
    if !SCOPES.contains(&scope) {
        return Err(Error::Config(format!(
            "unknown gradcheck scope `{scope}` (expected one of {})",
            SCOPES.join(", ")
        )));
    }
    if seeds == 0 {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut out = Vec::new();
    for suite in suites().into_iter().filter(|s| scope == "all" || s.scope == scope) {
        let start = Instant::now();
        let mut worst: f64 = 0.0;
        let (mut coords, mut kinks) = (0, 0);
        for seed in 0..seeds {
            let rep = (suite.run)(seed)?;
            worst = worst.max(rep.max_rel_error);
            coords += rep.coords_checked;
            kinks += rep.kinks;
        }
        let res = SuiteResult {
            scope: suite.scope,
            name: suite.name,
            seeds,
            max_rel_error: worst,
            coords_checked: coords,
            kinks,
            elapsed: start.elapsed(),
        };
        progress(&res);
        out.push(res);
    }
    Ok(out)
}

/// Negative control: a backward pass that scales one gradient by 0.9 must
/// be flagged by the harness.
pub fn corrupted_backward_is_flagged(seed: u64) -> Result<bool> {
    let mut r = rng(seed, 70);
    let mut store = ParamStore::new();
    store.insert("x", randn(shape(1, 2, 4, 4), &mut r), 1.0)?;
    store.insert("w", randn(shape(2, 2, 3, 3), &mut r), 1.0)?;
    let rep = fd(&mut store, seed, None, |s, t| {
        let x = t.param(s, "x")?;
        let w = t.param(s, "w")?;
        let w = t.grad_scale(w, 0.9)?;
        let y = t.conv2d(x, w, None, Conv2dSpec::same(3, 3))?;
        t.sum(y)
    })?;
    Ok(!rep.passes(TOLERANCE))
}
