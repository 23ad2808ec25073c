use crate::error::{Result, TensorError};
use crate::tensor::{DType, Shape, Tensor};

/// How a gate tensor is expanded against the input in [`broadcast_mul`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum GateKind {
    /// `n×c×1×1`, one factor per channel.
    Channel,
    /// `n×1×h×w`, one factor per pixel.
    Spatial,
    /// Same shape as the input.
    Full,
}

pub(crate) fn gate_kind(input: Shape, gate: Shape) -> Result<GateKind> {
    let [n, c, h, w] = input.dims();
    let kind = match gate.dims() {
        g if g == [n, c, h, w] => GateKind::Full,
        [gn, gc, 1, 1] if gn == n && gc == c => GateKind::Channel,
        [gn, 1, gh, gw] if gn == n && gh == h && gw == w => GateKind::Spatial,
        _ => {
            return Err(TensorError::invalid(
                "broadcast_mul",
                format!(
                    "gate {gate:?} is neither {n}×{c}×1×1, {n}×1×{h}×{w} nor {n}×{c}×{h}×{w}"
                ),
            ))
        }
    };
    Ok(kind)
}

#[inline]
pub(crate) fn gate_index(kind: GateKind, s: Shape, i: usize) -> usize {
    let p = s.plane();
    match kind {
        GateKind::Full => i,
        GateKind::Channel => i / p,
        GateKind::Spatial => (i / (s.c() * p)) * p + i % p,
    }
}

/// Multiplies `input` by `gate`, expanding the gate's singleton axes.
pub fn broadcast_mul(input: &Tensor, gate: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    let kind = gate_kind(s, gate.shape())?;
    let g = gate.data();
    let data = input
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v * g[gate_index(kind, s, i)])
        .collect();
    Ok(Tensor::from_raw(s, input.dtype().promote(gate.dtype()), data))
}

pub(crate) fn broadcast_mul_backward(
    input: &Tensor,
    gate: &Tensor,
    grad_out: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let s = input.shape();
    let kind = gate_kind(s, gate.shape()).expect("validated in forward");
    let g = gate.data();
    let mut gi = vec![0.0; s.numel()];
    let mut gg = vec![0.0; gate.shape().numel()];
    for (i, (&x, &go)) in input.data().iter().zip(grad_out.data()).enumerate() {
        let j = gate_index(kind, s, i);
        gi[i] = go * g[j];
        gg[j] += go * x;
    }
    (gi, gg)
}

/// Stacks tensors along the channel axis, in argument order.
pub fn concat_channel(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| TensorError::invalid("concat_channel", "no tensors given"))?
        .shape();
    let mut channels = 0;
    let mut dtype = DType::F32;
    for p in parts {
        let s = p.shape();
        if s.n() != first.n() {
            return Err(TensorError::mismatch("concat_channel", "batch", first.n(), s.n()));
        }
        if s.h() != first.h() {
            return Err(TensorError::mismatch("concat_channel", "height", first.h(), s.h()));
        }
        if s.w() != first.w() {
            return Err(TensorError::mismatch("concat_channel", "width", first.w(), s.w()));
        }
        channels += s.c();
        dtype = dtype.promote(p.dtype());
    }
    let out_shape = first.with_c(channels);
    let mut data = Vec::with_capacity(out_shape.numel());
    for n in 0..first.n() {
        for p in parts {
            let per = p.shape().c() * p.shape().plane();
            data.extend_from_slice(&p.data()[n * per..(n + 1) * per]);
        }
    }
    Ok(Tensor::from_raw(out_shape, dtype, data))
}

/// Channels `[start, end)` of every sample.
pub fn slice_channels(input: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let s = input.shape();
    if start >= end || end > s.c() {
        return Err(TensorError::invalid(
            "slice_channels",
            format!("range {start}..{end} outside {} channels", s.c()),
        ));
    }
    let p = s.plane();
    let mut data = Vec::with_capacity(s.n() * (end - start) * p);
    for n in 0..s.n() {
        data.extend_from_slice(&input.data()[(n * s.c() + start) * p..(n * s.c() + end) * p]);
    }
    Ok(Tensor::from_raw(s.with_c(end - start), input.dtype(), data))
}
