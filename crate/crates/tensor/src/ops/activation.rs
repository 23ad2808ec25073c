use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pointwise {
    Sigmoid,
    Relu,
    /// Natural logarithm; inputs must be positive.
    Ln,
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn pointwise(input: &Tensor, f: Pointwise) -> Tensor {
    match f {
        Pointwise::Sigmoid => input.map(sigmoid_scalar),
        Pointwise::Relu => input.map(|v| if v > 0.0 { v } else { 0.0 }),
        Pointwise::Ln => input.map(f64::ln),
    }
}

/// Gradient of `pointwise` given its input and output.
pub(crate) fn pointwise_backward(
    f: Pointwise,
    input: &Tensor,
    output: &Tensor,
    grad_out: &Tensor,
) -> Vec<f64> {
    match f {
        Pointwise::Sigmoid => output
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&y, &g)| g * y * (1.0 - y))
            .collect(),
        Pointwise::Relu => input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect(),
        Pointwise::Ln => input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| g / x)
            .collect(),
    }
}

/// Per-pixel softmax across channels, computed after subtracting the
/// channel maximum.
pub fn softmax_channel(input: &Tensor) -> Tensor {
    let s = input.shape();
    let (c, p) = (s.c(), s.plane());
    let src = input.data();
    let mut out = vec![0.0; src.len()];
    let mut buf = vec![0.0; c];
    for n in 0..s.n() {
        let base = n * c * p;
        for px in 0..p {
            let mut max = f64::NEG_INFINITY;
            for ch in 0..c {
                max = max.max(src[base + ch * p + px]);
            }
            let mut total = 0.0;
            for (ch, b) in buf.iter_mut().enumerate() {
                *b = (src[base + ch * p + px] - max).exp();
                total += *b;
            }
            for (ch, b) in buf.iter().enumerate() {
                out[base + ch * p + px] = b / total;
            }
        }
    }
    Tensor::from_raw(s, input.dtype(), out)
}

pub(crate) fn softmax_backward(output: &Tensor, grad_out: &Tensor) -> Vec<f64> {
    let s = output.shape();
    let (c, p) = (s.c(), s.plane());
    let y = output.data();
    let g = grad_out.data();
    let mut gin = vec![0.0; y.len()];
    for n in 0..s.n() {
        let base = n * c * p;
        for px in 0..p {
            let dot: f64 = (0..c)
                .map(|ch| y[base + ch * p + px] * g[base + ch * p + px])
                .sum();
            for ch in 0..c {
                let i = base + ch * p + px;
                gin[i] = y[i] * (g[i] - dot);
            }
        }
    }
    gin
}
