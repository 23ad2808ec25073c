//! 2-D convolution via im2col + GEMM.

use std::borrow::Cow;

use crate::error::{Result, TensorError};
use crate::exec;
use crate::tensor::{DType, Shape, Tensor};

/// Stride, zero padding and dilation of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub dilation: usize,
}

impl Conv2dSpec {
    pub fn new(stride: usize, pad_h: usize, pad_w: usize, dilation: usize) -> Self {
        Conv2dSpec {
            stride,
            pad_h,
            pad_w,
            dilation,
        }
    }

    /// Stride 1, padding that preserves spatial size for an odd `kh×kw` kernel.
    pub fn same(kh: usize, kw: usize) -> Self {
        Conv2dSpec::new(1, (kh - 1) / 2, (kw - 1) / 2, 1)
    }

    /// Size-preserving padding for a dilated odd square kernel.
    pub fn dilated(k: usize, dilation: usize) -> Self {
        let pad = dilation * (k - 1) / 2;
        Conv2dSpec::new(1, pad, pad, dilation)
    }

    pub fn output_hw(&self, h: usize, w: usize, kh: usize, kw: usize) -> Option<(usize, usize)> {
        let eff_h = self.dilation * (kh - 1) + 1;
        let eff_w = self.dilation * (kw - 1) + 1;
        let ph = h + 2 * self.pad_h;
        let pw = w + 2 * self.pad_w;
        if ph < eff_h || pw < eff_w {
            return None;
        }
        Some(((ph - eff_h) / self.stride + 1, (pw - eff_w) / self.stride + 1))
    }
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec::new(1, 0, 0, 1)
    }
}

pub(crate) struct ConvGeometry {
    in_c: usize,
    h: usize,
    w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    spec: Conv2dSpec,
}

impl ConvGeometry {
    fn k(&self) -> usize {
        self.in_c * self.kh * self.kw
    }

    fn npix(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1
            && self.kw == 1
            && self.spec.stride == 1
            && self.spec.pad_h == 0
            && self.spec.pad_w == 0
    }
}

pub(crate) fn geometry(
    input: Shape,
    weight: Shape,
    bias: Option<Shape>,
    spec: Conv2dSpec,
) -> Result<ConvGeometry> {
    if spec.stride == 0 || spec.dilation == 0 {
        return Err(TensorError::invalid(
            "conv2d",
            "stride and dilation must be at least 1",
        ));
    }
    if weight.c() != input.c() {
        return Err(TensorError::mismatch(
            "conv2d",
            "input channels",
            weight.c(),
            input.c(),
        ));
    }
    if let Some(b) = bias {
        if b.numel() != weight.n() {
            return Err(TensorError::mismatch(
                "conv2d",
                "bias length",
                weight.n(),
                b.numel(),
            ));
        }
    }
    let (oh, ow) = spec
        .output_hw(input.h(), input.w(), weight.h(), weight.w())
        .ok_or_else(|| {
            TensorError::invalid(
                "conv2d",
                format!("kernel {:?} larger than padded input {:?}", weight, input),
            )
        })?;
    Ok(ConvGeometry {
        in_c: input.c(),
        h: input.h(),
        w: input.w(),
        out_c: weight.n(),
        kh: weight.h(),
        kw: weight.w(),
        oh,
        ow,
        spec,
    })
}

fn im2col<'a>(g: &ConvGeometry, sample: &'a [f64]) -> Cow<'a, [f64]> {
    if g.is_pointwise() {
        return Cow::Borrowed(sample);
    }
    let npix = g.npix();
    let mut col = vec![0.0; g.k() * npix];
    let s = g.spec;
    for ic in 0..g.in_c {
        let plane = &sample[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ic * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * s.stride + ky * s.dilation) as isize - s.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * s.stride + kx * s.dilation) as isize - s.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.ow + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    Cow::Owned(col)
}

fn col2im(g: &ConvGeometry, col: &[f64], sample: &mut [f64]) {
    if g.is_pointwise() {
        sample.copy_from_slice(col);
        return;
    }
    let npix = g.npix();
    let s = g.spec;
    for ic in 0..g.in_c {
        let plane = &mut sample[ic * g.h * g.w..(ic + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ic * g.kh + ky) * g.kw + kx;
                let src = &col[row * npix..(row + 1) * npix];
                for oy in 0..g.oh {
                    let iy = (oy * s.stride + ky * s.dilation) as isize - s.pad_h as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let base = iy as usize * g.w;
                    for ox in 0..g.ow {
                        let ix = (ox * s.stride + kx * s.dilation) as isize - s.pad_w as isize;
                        if ix >= 0 && ix < g.w as isize {
                            plane[base + ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c[m×n] (+)= op(a)[m×k] · op(b)[k×n]`. `a_t`/`b_t` mean the
/// operand is stored transposed. Binary32 operands use single precision.
#[allow(clippy::too_many_arguments)]
fn gemm(
    dtype: DType,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if accumulate { 1.0 } else { 0.0 };
    match dtype {
        DType::F64 => {
            // SAFETY: the strides above address exactly the m×k, k×n and m×n
            // extents asserted against the slice lengths.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a.as_ptr(),
                    rsa,
                    csa,
                    b.as_ptr(),
                    rsb,
                    csb,
                    beta,
                    c.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        DType::F32 => {
            let a32: Vec<f32> = a[..m * k].iter().map(|&v| v as f32).collect();
            let b32: Vec<f32> = b[..k * n].iter().map(|&v| v as f32).collect();
            let mut c32: Vec<f32> = if accumulate {
                c[..m * n].iter().map(|&v| v as f32).collect()
            } else {
                vec![0.0; m * n]
            };
            // SAFETY: as above, on the converted buffers.
            unsafe {
                matrixmultiply::sgemm(
                    m,
                    k,
                    n,
                    1.0,
                    a32.as_ptr(),
                    rsa,
                    csa,
                    b32.as_ptr(),
                    rsb,
                    csb,
                    beta as f32,
                    c32.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
            for (dst, src) in c.iter_mut().zip(c32) {
                *dst = src as f64;
            }
        }
    }
}

/// Dense 2-D convolution (cross-correlation) with zero padding.
///
/// `weight` is `out_c×in_c×kh×kw`; `bias`, when given, holds `out_c` values
/// in any 4-D layout.
pub fn conv2d(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: Conv2dSpec,
) -> Result<Tensor> {
    let g = geometry(input.shape(), weight.shape(), bias.map(|b| b.shape()), spec)?;
    let dtype = input.dtype().promote(weight.dtype());
    let n = input.shape().n();
    let out_shape = Shape::new(n, g.out_c, g.oh, g.ow)?;
    let in_len = g.in_c * g.h * g.w;
    let out_len = g.out_c * g.npix();
    let mut out = vec![0.0; out_shape.numel()];
    let work = g.out_c * g.k() * g.npix();
    exec::for_each_chunk(&mut out, out_len, work, |s, dst| {
        let col = im2col(&g, &input.data()[s * in_len..(s + 1) * in_len]);
        gemm(
            dtype,
            g.out_c,
            g.k(),
            g.npix(),
            weight.data(),
            false,
            &col,
            false,
            dst,
            false,
        );
        if let Some(b) = bias {
            for (oc, row) in dst.chunks_mut(g.npix()).enumerate() {
                let bv = b.data()[oc];
                for v in row {
                    *v += bv;
                }
            }
        }
    });
    Ok(Tensor::from_raw(out_shape, dtype, out))
}

pub(crate) struct ConvGrads {
    pub input: Option<Tensor>,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

pub(crate) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    spec: Conv2dSpec,
    grad_out: &Tensor,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = geometry(input.shape(), weight.shape(), bias.map(|b| b.shape()), spec)?;
    let dtype = input.dtype().promote(weight.dtype());
    let n = input.shape().n();
    let in_len = g.in_c * g.h * g.w;
    let out_len = g.out_c * g.npix();
    let wlen = weight.shape().numel();
    let work = g.out_c * g.k() * g.npix();
    let gout = grad_out.data();

    // Per-sample (weight grad, input grad); folded in sample order below.
    let per_sample = exec::map_range(n, work * 2, |s| {
        let col = im2col(&g, &input.data()[s * in_len..(s + 1) * in_len]);
        let go = &gout[s * out_len..(s + 1) * out_len];
        let mut gw = vec![0.0; wlen];
        gemm(dtype, g.out_c, g.npix(), g.k(), go, false, &col, true, &mut gw, false);
        let gin = need_input.then(|| {
            let mut gcol = vec![0.0; g.k() * g.npix()];
            gemm(
                dtype,
                g.k(),
                g.out_c,
                g.npix(),
                weight.data(),
                true,
                go,
                false,
                &mut gcol,
                false,
            );
            let mut gi = vec![0.0; in_len];
            col2im(&g, &gcol, &mut gi);
            gi
        });
        (gw, gin)
    });

    let mut gw_total = vec![0.0; wlen];
    let mut gin_total = need_input.then(|| Vec::with_capacity(n * in_len));
    for (gw, gin) in per_sample {
        for (t, v) in gw_total.iter_mut().zip(gw) {
            *t += v;
        }
        if let (Some(total), Some(gi)) = (gin_total.as_mut(), gin) {
            total.extend(gi);
        }
    }

    let bias_grad = bias.map(|b| {
        let mut gb = vec![0.0; g.out_c];
        for s in 0..n {
            for (oc, acc) in gb.iter_mut().enumerate() {
                let start = s * out_len + oc * g.npix();
                *acc += gout[start..start + g.npix()].iter().sum::<f64>();
            }
        }
        Tensor::from_raw(b.shape(), b.dtype(), gb)
    });

    Ok(ConvGrads {
        input: gin_total.map(|d| Tensor::from_raw(input.shape(), input.dtype(), d)),
        weight: Tensor::from_raw(weight.shape(), weight.dtype(), gw_total),
        bias: bias_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(n: usize, c: usize, h: usize, w: usize) -> Tensor {
        Tensor::full(Shape::new(n, c, h, w).unwrap(), DType::F64, 1.0)
    }

    #[test]
    fn box_sum_of_ones() {
        let out = conv2d(&ones(1, 1, 3, 3), &ones(1, 1, 3, 3), None, Conv2dSpec::same(3, 3)).unwrap();
        assert_eq!(out.shape().dims(), [1, 1, 3, 3]);
        assert_eq!(out.at(0, 0, 1, 1), 9.0);
        assert_eq!(out.at(0, 0, 0, 0), 4.0);
    }

    #[test]
    fn unit_pointwise_kernel_is_identity() {
        let input = Tensor::from_vec([1, 1, 2, 3], vec![0.5, -1.25, 3.0, 7.0, 0.0, -2.0]).unwrap();
        let bias = Tensor::from_vec([1, 1, 1, 1], vec![0.0]).unwrap();
        let out = conv2d(&input, &ones(1, 1, 1, 1), Some(&bias), Conv2dSpec::default()).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn channel_mismatch_names_dimension() {
        let err = conv2d(&ones(1, 2, 4, 4), &ones(1, 3, 3, 3), None, Conv2dSpec::same(3, 3))
            .unwrap_err();
        match err {
            TensorError::ShapeMismatch { dim, expected, found, .. } => {
                assert_eq!(dim, "input channels");
                assert_eq!((expected, found), (3, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn output_size_formula() {
        let spec = Conv2dSpec::new(2, 1, 1, 1);
        assert_eq!(spec.output_hw(64, 64, 3, 3), Some((32, 32)));
        let dil = Conv2dSpec::dilated(3, 2);
        assert_eq!(dil.output_hw(8, 8, 3, 3), Some((8, 8)));
        let strip = Conv2dSpec::same(1, 7);
        assert_eq!(strip.output_hw(5, 9, 1, 7), Some((5, 9)));
    }
}
