#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsfcn_tensor::{Conv2dSpec, DType, Shape, Tensor};

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

/// Random values bounded away from zero, for kinked functions.
pub fn randn_away_from_zero(s: Shape, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(s, DType::F64, |_, _, _, _| {
        let mag: f64 = rng.gen_range(0.05..2.0);
        if rng.gen_bool(0.5) {
            mag
        } else {
            -mag
        }
    })
}

/// Direct cross-correlation with zero padding.
pub fn conv_oracle(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: Conv2dSpec) -> Tensor {
    let [n, ic, h, wd] = x.shape().dims();
    let [oc, _, kh, kw] = w.shape().dims();
    let (oh, ow) = spec.output_hw(h, wd, kh, kw).unwrap();
    let mut out = Tensor::zeros(shape(n, oc, oh, ow), DType::F64);
    for s in 0..n {
        for o in 0..oc {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for i in 0..ic {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let y = (oy * spec.stride + ky * spec.dilation) as isize
                                    - spec.pad_h as isize;
                                let xx = (ox * spec.stride + kx * spec.dilation) as isize
                                    - spec.pad_w as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                acc += x.at(s, i, y as usize, xx as usize) * w.at(o, i, ky, kx);
                            }
                        }
                    }
                    out.set(s, o, oy, ox, acc);
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
        .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}
