//! Spatially varying local filtering with per-pixel weights.

use crate::error::{Result, TensorError};
use crate::exec;
use crate::tensor::Tensor;

fn check(input: &Tensor, weights: &Tensor, taps: &[(isize, isize)]) -> Result<()> {
    let (s, ws) = (input.shape(), weights.shape());
    if taps.is_empty() {
        return Err(TensorError::invalid("local_filter", "no taps given"));
    }
    if ws.c() != taps.len() {
        return Err(TensorError::mismatch("local_filter", "weight channels", taps.len(), ws.c()));
    }
    for (dim, a, b) in [("batch", s.n(), ws.n()), ("height", s.h(), ws.h()), ("width", s.w(), ws.w())] {
        if a != b {
            return Err(TensorError::mismatch("local_filter", dim, a, b));
        }
    }
    Ok(())
}

#[inline]
fn shifted(p: usize, d: isize, size: usize) -> usize {
    (p as isize + d).clamp(0, size as isize - 1) as usize
}

/// `out[n,c,y,x] = Σ_k weights[n,k,y,x] · input[n,c,y+dy_k,x+dx_k]`, with
/// neighbour coordinates clamped to the border. `weights` is `n×K×h×w` for
/// `K = taps.len()` offsets `(dy, dx)`; the same weights apply to every
/// channel.
pub fn local_filter(input: &Tensor, weights: &Tensor, taps: &[(isize, isize)]) -> Result<Tensor> {
    check(input, weights, taps)?;
    let s = input.shape();
    let (c, h, w, p) = (s.c(), s.h(), s.w(), s.plane());
    let k = taps.len();
    let mut out = vec![0.0; s.numel()];
    exec::for_each_chunk(&mut out, c * p, c * p * k, |n, dst| {
        let wt = &weights.data()[n * k * p..(n + 1) * k * p];
        for ch in 0..c {
            let src = input.plane(n, ch);
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, &(dy, dx)) in taps.iter().enumerate() {
                        let q = shifted(y, dy, h) * w + shifted(x, dx, w);
                        acc += wt[t * p + y * w + x] * src[q];
                    }
                    dst[ch * p + y * w + x] = acc;
                }
            }
        }
    });
    Ok(Tensor::from_raw(s, input.dtype().promote(weights.dtype()), out))
}

pub(crate) struct FilterGrads {
    pub input: Vec<f64>,
    pub weights: Vec<f64>,
}

pub(crate) fn local_filter_backward(
    input: &Tensor,
    weights: &Tensor,
    taps: &[(isize, isize)],
    grad_out: &Tensor,
) -> FilterGrads {
    let s = input.shape();
    let (c, h, w, p) = (s.c(), s.h(), s.w(), s.plane());
    let k = taps.len();
    let g = grad_out.data();
    let mut gi = vec![0.0; s.numel()];
    let mut gw = vec![0.0; weights.shape().numel()];
    for n in 0..s.n() {
        let wt = &weights.data()[n * k * p..(n + 1) * k * p];
        for ch in 0..c {
            let src = input.plane(n, ch);
            let base = (n * c + ch) * p;
            for y in 0..h {
                for x in 0..w {
                    let go = g[base + y * w + x];
                    for (t, &(dy, dx)) in taps.iter().enumerate() {
                        let q = shifted(y, dy, h) * w + shifted(x, dx, w);
                        gi[base + q] += wt[t * p + y * w + x] * go;
                        gw[(n * k + t) * p + y * w + x] += src[q] * go;
                    }
                }
            }
        }
    }
    FilterGrads {
        input: gi,
        weights: gw,
    }
}
