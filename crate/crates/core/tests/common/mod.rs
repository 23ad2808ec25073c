#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsfcn::fca::{self, FcaConfig};
use wsfcn::nn::{Ctx, Init};
use wsfcn::sf2;
use wsfcn::tensor::{Conv2dSpec, DType, ParamStore, Shape, Tape, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn shape(n: usize, c: usize, h: usize, w: usize) -> Shape {
    Shape::new(n, c, h, w).unwrap()
}

pub fn randn(s: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(s, DType::F64, 1.0, rng)
}

pub fn uniform(s: Shape, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::rand_uniform(s, DType::F64, lo, hi, rng)
}

/// Direct seven-loop convolution with zero padding.
pub fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: Conv2dSpec) -> Tensor {
    let [n, c, h, wd] = x.shape().dims();
    let [o, _, kh, kw] = w.shape().dims();
    let (oh, ow) = spec.output_hw(h, wd, kh, kw).unwrap();
    let mut out = Tensor::zeros(shape(n, o, oh, ow), DType::F64);
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[oi]);
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * spec.stride + ky * spec.dilation) as isize - spec.pad_h as isize;
                                let ix = (xo * spec.stride + kx * spec.dilation) as isize - spec.pad_w as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.at(ni, ci, iy as usize, ix as usize) * w.at(oi, ci, ky, kx);
                            }
                        }
                    }
                    out.set(ni, oi, y, xo, acc);
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn fca_store(cfg: &FcaConfig, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    fca::init(
        &mut Init {
            store: &mut store,
            rng: &mut r,
            dtype: DType::F64,
            lr_multiplier: 1.0,
        },
        cfg,
    )
    .unwrap();
    store
}

pub fn sf2_store(d2: usize, seed: u64) -> ParamStore {
    let mut store = ParamStore::new();
    let mut r = rng(seed);
    sf2::init(
        &mut Init {
            store: &mut store,
            rng: &mut r,
            dtype: DType::F64,
            lr_multiplier: 1.0,
        },
        d2,
    )
    .unwrap();
    store
}

/// Overwrites every parameter whose name starts with `prefix` by zeros.
pub fn zero_params(store: &mut ParamStore, prefix: &str) {
    let names: Vec<String> = store.names().filter(|n| n.starts_with(prefix)).map(str::to_string).collect();
    assert!(!names.is_empty(), "no parameters under {prefix}");
    for n in names {
        let s = store.value(&n).unwrap().shape();
        store.set_value(&n, Tensor::zeros(s, DType::F64)).unwrap();
    }
}

/// Runs `f` on a fresh tape and returns the value of the variable it yields.
pub fn eval<F>(store: &ParamStore, training: bool, f: F) -> Tensor
where
    F: FnOnce(&mut Ctx<'_>) -> wsfcn::Result<wsfcn::tensor::Var>,
{
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, &mut tape, training);
    let v = f(&mut ctx).unwrap();
    ctx.value(v).clone()
}

pub fn assert_simplex(t: &Tensor, tol: f64) {
    let [n, c, h, w] = t.shape().dims();
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for ci in 0..c {
                    let v = t.at(ni, ci, y, x);
                    assert!(v >= 0.0, "negative mass {v} at ({ni},{ci},{y},{x})");
                    s += v;
                }
                assert!((s - 1.0).abs() <= tol, "mass {s} at ({ni},{y},{x})");
            }
        }
    }
}
