mod common;

use common::*;
use rand::Rng;
use wsfcn::nn::{weight_name, Ctx};
use wsfcn::sf2;
use wsfcn::tensor::{DType, ParamStore, Tape, Tensor};

fn pair(n: usize, d: usize, h: usize, w: usize, s: usize, seed: u64) -> (Tensor, Tensor) {
    let mut r = rng(seed);
    (randn(shape(n, d, h, w), &mut r), randn(shape(n, d, h * s, w * s), &mut r))
}

fn offsets(store: &ParamStore, fh: &Tensor, fl: &Tensor) -> Tensor {
    eval(store, false, |ctx| {
        let (h, l) = (ctx.constant(fh.clone()), ctx.constant(fl.clone()));
        sf2::predict_offset(ctx, h, l)
    })
}

/// Bilinear sample of one plane at a continuous coordinate, border clamped.
fn sample(x: &Tensor, n: usize, c: usize, y: f64, xx: f64) -> f64 {
    let [_, _, h, w] = x.shape().dims();
    let axis = |v: f64, size: usize| {
        let v = v.clamp(0.0, (size - 1) as f64);
        let i0 = v.floor() as usize;
        (i0, (i0 + 1).min(size - 1), v - i0 as f64)
    };
    let (y0, y1, ty) = axis(y, h);
    let (x0, x1, tx) = axis(xx, w);
    let top = x.at(n, c, y0, x0) * (1.0 - tx) + x.at(n, c, y0, x1) * tx;
    let bottom = x.at(n, c, y1, x0) * (1.0 - tx) + x.at(n, c, y1, x1) * tx;
    top * (1.0 - ty) + bottom * ty
}

/// Direct evaluation of offset-guided upsampling.
fn aligned_oracle(fh: &Tensor, off: &Tensor, s: usize) -> Tensor {
    let [n, c, h, w] = fh.shape().dims();
    let s = s as f64;
    Tensor::from_fn(shape(n, c, h * s as usize, w * s as usize), DType::F64, |ni, ci, y, x| {
        let sy = (y as f64 + off.at(ni, 0, y, x) + 0.5) / s - 0.5;
        let sx = (x as f64 + off.at(ni, 1, y, x) + 0.5) / s - 0.5;
        sample(fh, ni, ci, sy, sx)
    })
}

fn aligned(fh: &Tensor, off: &Tensor, s: usize) -> Tensor {
    let mut t = Tape::new();
    let (h, o) = (t.constant(fh.clone()), t.constant(off.clone()));
    let v = t.aligned_upsample(h, o, s).unwrap();
    t.value(v).clone()
}

fn plain(fh: &Tensor, oh: usize, ow: usize) -> Tensor {
    let mut t = Tape::new();
    let h = t.constant(fh.clone());
    let v = t.bilinear_upsample(h, oh, ow).unwrap();
    t.value(v).clone()
}

#[test]
fn zero_offset_head_gives_zero_offsets() {
    let mut store = sf2_store(3, 0);
    zero_params(&mut store, sf2::OFFSET);
    let (fh, fl) = pair(2, 3, 3, 4, 2, 1);
    let off = offsets(&store, &fh, &fl);
    assert_eq!(off.shape().dims(), [2, 2, 6, 8]);
    assert_eq!(off.max_abs(), 0.0);
}

#[test]
fn offset_shapes_follow_the_low_level_map() {
    let mut r = rng(3);
    for _ in 0..20 {
        let (n, d, h, w, s) = (r.gen_range(1..=2), r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=4), r.gen_range(1..=3));
        let store = sf2_store(d, r.gen());
        let (fh, fl) = pair(n, d, h, w, s, r.gen());
        assert_eq!(offsets(&store, &fh, &fl).shape().dims(), [n, 2, h * s, w * s]);
    }
}

#[test]
fn inconsistent_levels_are_rejected() {
    let store = sf2_store(2, 0);
    let mut r = rng(0);
    for (h, l) in [
        (shape(1, 2, 3, 3), shape(1, 2, 7, 7)),
        (shape(1, 2, 3, 3), shape(1, 2, 6, 9)),
        (shape(1, 2, 3, 3), shape(1, 3, 6, 6)),
        (shape(1, 2, 3, 3), shape(2, 2, 6, 6)),
        (shape(1, 2, 4, 4), shape(1, 2, 2, 2)),
    ] {
        let (fh, fl) = (randn(h, &mut r), randn(l, &mut r));
        let mut tape = Tape::new();
        let mut ctx = Ctx::new(&store, &mut tape, false);
        let (a, b) = (ctx.constant(fh), ctx.constant(fl));
        let err = sf2::sf2_fuse(&mut ctx, a, b).unwrap_err();
        assert!(err.is_validation(), "{err}");
    }
}

#[test]
fn zero_offsets_reduce_to_plain_upsampling() {
    let mut r = rng(5);
    for _ in 0..50 {
        let (n, c, h, w, s) = (r.gen_range(1..=2), r.gen_range(1..=3), r.gen_range(1..=6), r.gen_range(1..=6), r.gen_range(1..=4));
        let fh = randn(shape(n, c, h, w), &mut r);
        let off = Tensor::zeros(shape(n, 2, h * s, w * s), DType::F64);
        let a = aligned(&fh, &off, s);
        let p = plain(&fh, h * s, w * s);
        assert_eq!(a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), p.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn constant_maps_stay_constant_under_any_offsets() {
    let mut r = rng(6);
    for _ in 0..20 {
        let level: f64 = r.gen_range(-3.0..3.0);
        let fh = Tensor::full(shape(1, 2, 3, 4), DType::F64, level);
        let off = randn(shape(1, 2, 6, 8), &mut r).map(|v| 10.0 * v);
        let out = aligned(&fh, &off, 2);
        assert!(out.data().iter().all(|&v| (v - level).abs() < 1e-12));
    }
}

#[test]
fn uniform_row_offset_shifts_by_one_low_resolution_row() {
    for s in 1..=3 {
        let fh = randn(shape(1, 2, 5, 4), &mut rng(s as u64));
        let (oh, ow) = (5 * s, 4 * s);
        let off = Tensor::from_fn(shape(1, 2, oh, ow), DType::F64, |_, c, _, _| if c == 0 { s as f64 } else { 0.0 });
        let shifted = aligned(&fh, &off, s);
        let base = plain(&fh, oh, ow);
        assert!(max_abs_diff(&shifted, &aligned_oracle(&fh, &off, s)) < 1e-12);
        for c in 0..2 {
            for y in 0..oh - s {
                for x in 0..ow {
                    assert_eq!(shifted.at(0, c, y, x), base.at(0, c, y + s, x));
                }
            }
        }
    }
}

#[test]
fn random_offsets_match_the_sampling_oracle() {
    let mut r = rng(8);
    for _ in 0..20 {
        let s = r.gen_range(1..=3);
        let fh = randn(shape(2, 2, 3, 4), &mut r);
        let off = randn(shape(2, 2, 3 * s, 4 * s), &mut r).map(|v| 2.0 * v);
        assert!(max_abs_diff(&aligned(&fh, &off, s), &aligned_oracle(&fh, &off, s)) < 1e-12);
    }
}

fn fuse(store: &ParamStore, fh: &Tensor, fl: &Tensor, identity: bool) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, &mut tape, false);
    ctx.identity_embeddings = identity;
    let (h, l) = (ctx.constant(fh.clone()), ctx.constant(fl.clone()));
    let (a, b) = sf2::sf2_fuse(&mut ctx, h, l).unwrap();
    (ctx.value(a).clone(), ctx.value(b).clone())
}

#[test]
fn zero_embeddings_give_zero_outputs() {
    let mut store = sf2_store(3, 2);
    for p in [sf2::EMBED_H, sf2::EMBED_L, sf2::FUSE_H, sf2::FUSE_L] {
        zero_params(&mut store, &weight_name(p));
    }
    let (fh, fl) = pair(1, 3, 3, 3, 2, 3);
    let (a, b) = fuse(&store, &fh, &fl, false);
    assert_eq!((a.max_abs(), b.max_abs()), (0.0, 0.0));
    assert_eq!(a.shape().dims(), [1, 3, 6, 6]);
    assert_eq!(b.shape().dims(), [1, 3, 6, 6]);
}

#[test]
fn identity_embeddings_match_the_loop_oracle() {
    for seed in 0..10 {
        let store = sf2_store(3, seed);
        let (fh, fl) = pair(2, 3, 3, 4, 2, 100 + seed);
        let off = offsets(&store, &fh, &fl);
        assert!(off.max_abs() > 0.0);
        let g = aligned_oracle(&fh, &off, 2);
        let (a, b) = fuse(&store, &fh, &fl, true);
        for i in 0..g.data().len() {
            let (gv, lv) = (g.data()[i], fl.data()[i]);
            assert!((a.data()[i] - (gv + gv * lv)).abs() < 1e-12);
            assert!((b.data()[i] - (lv + gv * lv)).abs() < 1e-12);
        }
    }
}

fn output(store: &ParamStore, h: &Tensor, l: &Tensor) -> Tensor {
    eval(store, false, |ctx| {
        let (a, b) = (ctx.constant(h.clone()), ctx.constant(l.clone()));
        sf2::sf2_output(ctx, a, b)
    })
}

#[test]
fn output_embeds_the_sum() {
    let store = sf2_store(3, 4);
    let zero = Tensor::zeros(shape(1, 3, 4, 4), DType::F64);
    assert_eq!(output(&store, &zero, &zero).max_abs(), 0.0);
    let h = randn(shape(1, 3, 4, 4), &mut rng(5));
    let embedded = eval(&store, false, |ctx| {
        let v = ctx.constant(h.clone());
        ctx.embed(sf2::OUT, v)
    });
    assert_eq!(output(&store, &h, &zero), embedded);
    let wrong = Tensor::zeros(shape(1, 3, 4, 5), DType::F64);
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(&store, &mut tape, false);
    let (a, b) = (ctx.constant(h), ctx.constant(wrong));
    assert!(sf2::sf2_output(&mut ctx, a, b).is_err());
}

fn fused_loss(store: &ParamStore, fh: &Tensor, fl: &Tensor) -> f64 {
    let (a, b) = fuse(store, fh, fl, false);
    a.data().iter().zip(b.data()).enumerate().map(|(i, (x, y))| (1.0 + (i % 5) as f64) * (x + 2.0 * y)).sum()
}

#[test]
fn offsets_receive_nonzero_gradients() {
    for seed in 0..5 {
        let mut store = sf2_store(3, seed);
        let (fh, fl) = pair(1, 3, 3, 3, 2, 50 + seed);
        let name = weight_name(sf2::OFFSET);
        let base = store.value(&name).unwrap().clone();
        let eps = 1e-5;
        let mut largest: f64 = 0.0;
        for i in 0..base.shape().numel() {
            let mut fd = |delta: f64| {
                let mut w = base.clone();
                w.data_mut()[i] += delta;
                store.set_value(&name, w).unwrap();
                fused_loss(&store, &fh, &fl)
            };
            let g = (fd(eps) - fd(-eps)) / (2.0 * eps);
            largest = largest.max(g.abs());
        }
        assert!(largest > 1e-3, "seed {seed}: offset head gradient {largest}");
    }
}

#[test]
fn fusion_is_deterministic() {
    let store = sf2_store(4, 7);
    let (fh, fl) = pair(2, 4, 4, 4, 2, 8);
    let first = fuse(&store, &fh, &fl, false);
    let second = fuse(&store, &fh, &fl, false);
    assert_eq!(first, second);
}
