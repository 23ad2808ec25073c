//! Global average / max pooling over the spatial or the channel axis.

use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Result of a pooling pass. `argmax` holds, for max pooling, the flat input
/// index that produced each output element (first occurrence wins).
pub(crate) struct Pooled {
    pub value: Tensor,
    pub argmax: Option<Vec<usize>>,
}

/// Reduces every `h×w` plane to one value: output `n×c×1×1`.
pub fn global_pool_spatial(input: &Tensor, mode: PoolMode) -> Tensor {
    pool_spatial(input, mode).value
}

/// Reduces the channel axis at every pixel: output `n×1×h×w`.
pub fn global_pool_channel(input: &Tensor, mode: PoolMode) -> Tensor {
    pool_channel(input, mode).value
}

pub(crate) fn pool_spatial(input: &Tensor, mode: PoolMode) -> Pooled {
    let s = input.shape();
    let p = s.plane();
    let out_shape = Shape::from_dims_unchecked([s.n(), s.c(), 1, 1]);
    let mut out = Vec::with_capacity(s.n() * s.c());
    let mut arg = Vec::new();
    for (i, plane) in input.data().chunks(p).enumerate() {
        match mode {
            PoolMode::Avg => out.push(plane.iter().sum::<f64>() / p as f64),
            PoolMode::Max => {
                let (j, v) = first_max(plane.iter().copied());
                out.push(v);
                arg.push(i * p + j);
            }
        }
    }
    Pooled {
        value: Tensor::from_raw(out_shape, input.dtype(), out),
        argmax: (mode == PoolMode::Max).then_some(arg),
    }
}

pub(crate) fn pool_channel(input: &Tensor, mode: PoolMode) -> Pooled {
    let s = input.shape();
    let p = s.plane();
    let out_shape = Shape::from_dims_unchecked([s.n(), 1, s.h(), s.w()]);
    let mut out = Vec::with_capacity(s.n() * p);
    let mut arg = Vec::new();
    let data = input.data();
    for n in 0..s.n() {
        let base = n * s.c() * p;
        for px in 0..p {
            let column = (0..s.c()).map(|c| data[base + c * p + px]);
            match mode {
                PoolMode::Avg => out.push(column.sum::<f64>() / s.c() as f64),
                PoolMode::Max => {
                    let (c, v) = first_max(column);
                    out.push(v);
                    arg.push(base + c * p + px);
                }
            }
        }
    }
    Pooled {
        value: Tensor::from_raw(out_shape, input.dtype(), out),
        argmax: (mode == PoolMode::Max).then_some(arg),
    }
}

fn first_max(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

pub(crate) fn pool_spatial_backward(
    input: Shape,
    mode: PoolMode,
    argmax: Option<&[usize]>,
    grad_out: &Tensor,
) -> Vec<f64> {
    let p = input.plane();
    let mut g = vec![0.0; input.numel()];
    match (mode, argmax) {
        (PoolMode::Max, Some(arg)) => {
            for (&i, &go) in arg.iter().zip(grad_out.data()) {
                g[i] += go;
            }
        }
        _ => {
            for (plane, &go) in g.chunks_mut(p).zip(grad_out.data()) {
                let share = go / p as f64;
                plane.iter_mut().for_each(|v| *v = share);
            }
        }
    }
    g
}

pub(crate) fn pool_channel_backward(
    input: Shape,
    mode: PoolMode,
    argmax: Option<&[usize]>,
    grad_out: &Tensor,
) -> Vec<f64> {
    let p = input.plane();
    let mut g = vec![0.0; input.numel()];
    match (mode, argmax) {
        (PoolMode::Max, Some(arg)) => {
            for (&i, &go) in arg.iter().zip(grad_out.data()) {
                g[i] += go;
            }
        }
        _ => {
            let c = input.c();
            for n in 0..input.n() {
                for px in 0..p {
                    let share = grad_out.data()[n * p + px] / c as f64;
                    for ch in 0..c {
                        g[(n * c + ch) * p + px] = share;
                    }
                }
            }
        }
    }
    g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spatial_pooling_by_hand() {
        let t = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(global_pool_spatial(&t, PoolMode::Avg).data(), &[2.5]);
        assert_eq!(global_pool_spatial(&t, PoolMode::Max).data(), &[4.0]);
    }

    #[test]
    fn channel_pooling_by_hand() {
        let t = Tensor::from_vec([1, 3, 1, 1], vec![1.0, 5.0, 3.0]).unwrap();
        assert_eq!(global_pool_channel(&t, PoolMode::Avg).data(), &[3.0]);
        assert_eq!(global_pool_channel(&t, PoolMode::Max).data(), &[5.0]);
    }

    #[test]
    fn constant_input_pools_to_constant() {
        let t = Tensor::full(Shape::new(2, 3, 4, 5).unwrap(), crate::DType::F64, 0.375);
        for mode in [PoolMode::Avg, PoolMode::Max] {
            assert!(global_pool_spatial(&t, mode).data().iter().all(|&v| v == 0.375));
            assert!(global_pool_channel(&t, mode).data().iter().all(|&v| v == 0.375));
        }
    }
}
