//! Bilinear sampling.
//!
//! All samplers share one continuous-coordinate convention (pixel centres at
//! integer coordinates, align-corners off): output pixel `p` of a resize by
//! factor `s` reads source coordinate `(p + 0.5) / s - 0.5`. Coordinates are
//! clamped to `[0, size - 1]`, which replicates the border. Interpolation uses
//! the lerp form `a + t·(b - a)` so constant inputs are reproduced exactly.

use crate::error::{Result, TensorError};
use crate::exec;
use crate::tensor::{Shape, Tensor};

/// Source coordinate of output index `p` (plus any offset already folded in)
/// for a resize with scale factor `scale = out / in`.
#[inline]
pub fn source_coord(p: f64, scale: f64) -> f64 {
    (p + 0.5) / scale - 0.5
}

/// Clamped neighbour indices and interpolation weight for coordinate `x`.
/// The final flag is false when the coordinate was clamped (zero slope).
#[inline]
fn neighbours(x: f64, size: usize) -> (usize, usize, f64, bool) {
    let max = (size - 1) as f64;
    let inside = x > 0.0 && x < max;
    let xc = x.clamp(0.0, max);
    let i0 = xc.floor() as usize;
    let i1 = (i0 + 1).min(size - 1);
    (i0, i1, xc - i0 as f64, inside)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Samples every channel of `input` at per-position coordinates.
/// `coords(n, oy, ox)` returns the `(row, col)` source coordinate.
fn sample_forward<F>(input: &Tensor, oh: usize, ow: usize, coords: F) -> Tensor
where
    F: Fn(usize, usize, usize) -> (f64, f64) + Sync,
{
    let s = input.shape();
    let (c, h, w) = (s.c(), s.h(), s.w());
    let out_shape = Shape::from_dims_unchecked([s.n(), c, oh, ow]);
    let mut out = vec![0.0; out_shape.numel()];
    let chunk = c * oh * ow;
    exec::for_each_chunk(&mut out, chunk, chunk * 8, |n, dst| {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x) = coords(n, oy, ox);
                let (y0, y1, fy, _) = neighbours(y, h);
                let (x0, x1, fx, _) = neighbours(x, w);
                for ch in 0..c {
                    let plane = input.plane(n, ch);
                    let top = lerp(plane[y0 * w + x0], plane[y0 * w + x1], fx);
                    let bottom = lerp(plane[y1 * w + x0], plane[y1 * w + x1], fx);
                    dst[(ch * oh + oy) * ow + ox] = lerp(top, bottom, fy);
                }
            }
        }
    });
    Tensor::from_raw(out_shape, input.dtype(), out)
}

pub(crate) struct SampleGrads {
    pub input: Option<Vec<f64>>,
    /// `(d/drow, d/dcol)` per output position, summed over channels.
    pub coords: Option<Vec<(f64, f64)>>,
}

fn sample_backward<F>(
    input: &Tensor,
    oh: usize,
    ow: usize,
    coords: F,
    grad_out: &Tensor,
    need_input: bool,
    need_coords: bool,
) -> SampleGrads
where
    F: Fn(usize, usize, usize) -> (f64, f64),
{
    let s = input.shape();
    let (c, h, w) = (s.c(), s.h(), s.w());
    let g = grad_out.data();
    let mut gin = need_input.then(|| vec![0.0; s.numel()]);
    let mut gpos = need_coords.then(|| vec![(0.0, 0.0); s.n() * oh * ow]);
    for n in 0..s.n() {
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x) = coords(n, oy, ox);
                let (y0, y1, fy, y_in) = neighbours(y, h);
                let (x0, x1, fx, x_in) = neighbours(x, w);
                let mut dy = 0.0;
                let mut dx = 0.0;
                for ch in 0..c {
                    let go = g[((n * c + ch) * oh + oy) * ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    let base = (n * c + ch) * h * w;
                    if let Some(gi) = gin.as_mut() {
                        gi[base + y0 * w + x0] += go * (1.0 - fx) * (1.0 - fy);
                        gi[base + y0 * w + x1] += go * fx * (1.0 - fy);
                        gi[base + y1 * w + x0] += go * (1.0 - fx) * fy;
                        gi[base + y1 * w + x1] += go * fx * fy;
                    }
                    if gpos.is_some() {
                        let plane = &input.data()[base..base + h * w];
                        let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                        let (cc, d) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                        let top = lerp(a, b, fx);
                        let bottom = lerp(cc, d, fx);
                        dy += go * (bottom - top);
                        dx += go * ((1.0 - fy) * (b - a) + fy * (d - cc));
                    }
                }
                if let Some(gp) = gpos.as_mut() {
                    gp[(n * oh + oy) * ow + ox] = (
                        if y_in { dy } else { 0.0 },
                        if x_in { dx } else { 0.0 },
                    );
                }
            }
        }
    }
    SampleGrads {
        input: gin,
        coords: gpos,
    }
}

fn scales(s: Shape, oh: usize, ow: usize) -> (f64, f64) {
    (oh as f64 / s.h() as f64, ow as f64 / s.w() as f64)
}

/// Bilinear resize of every plane to `out_h × out_w`.
pub fn bilinear_upsample(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    Shape::new(1, 1, out_h, out_w)?;
    let (sy, sx) = scales(input.shape(), out_h, out_w);
    Ok(sample_forward(input, out_h, out_w, |_, oy, ox| {
        (source_coord(oy as f64, sy), source_coord(ox as f64, sx))
    }))
}

pub(crate) fn bilinear_upsample_backward(
    input: &Tensor,
    out_h: usize,
    out_w: usize,
    grad_out: &Tensor,
) -> Vec<f64> {
    let (sy, sx) = scales(input.shape(), out_h, out_w);
    sample_backward(
        input,
        out_h,
        out_w,
        |_, oy, ox| (source_coord(oy as f64, sy), source_coord(ox as f64, sx)),
        grad_out,
        true,
        false,
    )
    .input
    .unwrap_or_default()
}

fn check_positions(op: &'static str, input: Shape, positions: Shape) -> Result<()> {
    if positions.c() != 2 {
        return Err(TensorError::mismatch(op, "position channels", 2, positions.c()));
    }
    if positions.n() != input.n() {
        return Err(TensorError::mismatch(op, "batch", input.n(), positions.n()));
    }
    Ok(())
}

/// Samples `input` at explicit coordinates. `positions` is `n×2×oh×ow`
/// with channel 0 the row and channel 1 the column coordinate.
pub fn grid_sample_bilinear(input: &Tensor, positions: &Tensor) -> Result<Tensor> {
    let ps = positions.shape();
    check_positions("grid_sample_bilinear", input.shape(), ps)?;
    Ok(sample_forward(input, ps.h(), ps.w(), |n, oy, ox| {
        (positions.at(n, 0, oy, ox), positions.at(n, 1, oy, ox))
    }))
}

pub(crate) fn grid_sample_backward(
    input: &Tensor,
    positions: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
    need_positions: bool,
) -> SampleGrads {
    let ps = positions.shape();
    sample_backward(
        input,
        ps.h(),
        ps.w(),
        |n, oy, ox| (positions.at(n, 0, oy, ox), positions.at(n, 1, oy, ox)),
        grad_out,
        need_input,
        need_positions,
    )
}

/// Offset-guided upsampling by an integer `stride`: output pixel `p` samples
/// `input` at `((p + offset(p)) + 0.5) / stride - 0.5`. Offsets are `n×2×H×W`
/// in output-resolution pixels (row, col). With zero offsets this is exactly
/// [`bilinear_upsample`].
pub fn aligned_upsample(input: &Tensor, offset: &Tensor, stride: usize) -> Result<Tensor> {
    let (oh, ow) = aligned_extent(input.shape(), offset.shape(), stride)?;
    let (sy, sx) = scales(input.shape(), oh, ow);
    Ok(sample_forward(input, oh, ow, |n, oy, ox| {
        (
            source_coord(oy as f64 + offset.at(n, 0, oy, ox), sy),
            source_coord(ox as f64 + offset.at(n, 1, oy, ox), sx),
        )
    }))
}

pub(crate) fn aligned_extent(input: Shape, offset: Shape, stride: usize) -> Result<(usize, usize)> {
    check_positions("aligned_upsample", input, offset)?;
    if stride == 0 {
        return Err(TensorError::invalid("aligned_upsample", "stride must be positive"));
    }
    let (oh, ow) = (offset.h(), offset.w());
    if oh != input.h() * stride {
        return Err(TensorError::mismatch(
            "aligned_upsample",
            "height",
            input.h() * stride,
            oh,
        ));
    }
    if ow != input.w() * stride {
        return Err(TensorError::mismatch(
            "aligned_upsample",
            "width",
            input.w() * stride,
            ow,
        ));
    }
    Ok((oh, ow))
}

pub(crate) fn aligned_upsample_backward(
    input: &Tensor,
    offset: &Tensor,
    grad_out: &Tensor,
    need_input: bool,
    need_offset: bool,
) -> SampleGrads {
    let os = offset.shape();
    let (oh, ow) = (os.h(), os.w());
    let (sy, sx) = scales(input.shape(), oh, ow);
    let mut grads = sample_backward(
        input,
        oh,
        ow,
        |n, oy, ox| {
            (
                source_coord(oy as f64 + offset.at(n, 0, oy, ox), sy),
                source_coord(ox as f64 + offset.at(n, 1, oy, ox), sx),
            )
        },
        grad_out,
        need_input,
        need_offset,
    );
    if let Some(gp) = grads.coords.as_mut() {
        for (dy, dx) in gp.iter_mut() {
            *dy /= sy;
            *dx /= sx;
        }
    }
    grads
}
