//! Pixel-adaptive mask refinement.
//!
//! Affinities come from the image intensity (mean over RGB) at mask
//! resolution. For each dilation `d` the 3×3 neighbours `q = p + d·(dy, dx)`
//! receive `softmax_q(−|I_q − I_p| / (τ·σ_d(p) + floor))`, where `σ_d(p)` is
//! the standard deviation of the nine sampled intensities. The per-dilation
//! distributions are averaged, so every pixel's weights form a convex
//! combination. Each iteration replaces a pixel's mask vector by the weighted
//! average of its neighbours' vectors.

use wsfcn_tensor::ops::local_filter;
use wsfcn_tensor::{Shape, Tensor, Var};

use crate::error::{Error, Result};
use crate::nn::Ctx;

/// Keeps the affinity logits finite on flat image regions.
pub const SIGMA_FLOOR: f64 = 1e-2;

#[derive(Clone, Debug, PartialEq)]
pub struct PamrConfig {
    pub iterations: usize,
    pub dilations: Vec<usize>,
    /// Scale of the local intensity spread used as the affinity temperature.
    pub temperature: f64,
}

impl Default for PamrConfig {
    fn default() -> Self {
        PamrConfig {
            iterations: 10,
            dilations: vec![1, 2, 4, 8],
            temperature: 0.1,
        }
    }
}

impl PamrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dilations.is_empty() || self.dilations.contains(&0) {
            return Err(Error::Config("pamr dilations must be a non-empty list of positive ints".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config("pamr temperature must be positive".into()));
        }
        Ok(())
    }

    /// Neighbour offsets, nine per dilation, in dilation-major order.
    pub fn taps(&self) -> Vec<(isize, isize)> {
        self.dilations
            .iter()
            .flat_map(|&d| {
                let d = d as isize;
                (-1..=1).flat_map(move |dy| (-1..=1).map(move |dx| (dy * d, dx * d)))
            })
            .collect()
    }
}

/// Mean over RGB of `image`, block-averaged by an integer `factor`.
pub fn intensity(image: &Tensor, factor: usize) -> Result<Tensor> {
    let s = image.shape();
    if factor == 0 || s.h() % factor != 0 || s.w() % factor != 0 {
        return Err(Error::Invalid(format!(
            "image {}×{} is not divisible by {factor}",
            s.h(),
            s.w()
        )));
    }
    let (h, w) = (s.h() / factor, s.w() / factor);
    let norm = (s.c() * factor * factor) as f64;
    Ok(Tensor::from_fn(Shape::new(s.n(), 1, h, w)?, image.dtype(), |n, _, y, x| {
        let mut acc = 0.0;
        for c in 0..s.c() {
            for dy in 0..factor {
                for dx in 0..factor {
                    acc += image.at(n, c, y * factor + dy, x * factor + dx);
                }
            }
        }
        acc / norm
    }))
}

fn clamp(v: isize, len: usize) -> usize {
    v.clamp(0, len as isize - 1) as usize
}

/// Affinity weights `n×K×h×w` for the taps of [`PamrConfig::taps`].
pub fn affinities(intensity: &Tensor, cfg: &PamrConfig) -> Result<Tensor> {
    cfg.validate()?;
    let s = intensity.shape();
    let taps = cfg.taps();
    let k = taps.len();
    let (h, w) = (s.h(), s.w());
    let mut out = vec![0.0; s.n() * k * h * w];
    let per_dilation = 1.0 / cfg.dilations.len() as f64;
    let mut vals = [0.0; 9];
    let mut logits = [0.0; 9];
    for n in 0..s.n() {
        let plane = intensity.plane(n, 0);
        for y in 0..h {
            for x in 0..w {
                let center = plane[y * w + x];
                for (d, group) in taps.chunks(9).enumerate() {
                    for (j, &(dy, dx)) in group.iter().enumerate() {
                        let qy = clamp(y as isize + dy, h);
                        let qx = clamp(x as isize + dx, w);
                        vals[j] = plane[qy * w + qx];
                    }
                    let mean = vals.iter().sum::<f64>() / 9.0;
                    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 9.0;
                    let denom = cfg.temperature * var.sqrt() + SIGMA_FLOOR;
                    for j in 0..9 {
                        logits[j] = -(vals[j] - center).abs() / denom;
                    }
                    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut z = 0.0;
                    for l in logits.iter_mut() {
                        *l = (*l - max).exp();
                        z += *l;
                    }
                    for j in 0..9 {
                        let ch = d * 9 + j;
                        out[((n * k + ch) * h + y) * w + x] = logits[j] / z * per_dilation;
                    }
                }
            }
        }
    }
    Ok(Tensor::new(Shape::new(s.n(), k, h, w)?, intensity.dtype(), out)?)
}

/// Divides every pixel's channel vector by its sum.
pub fn renormalize(masks: &mut Tensor) {
    let s = masks.shape();
    let (c, p) = (s.c(), s.plane());
    let data = masks.data_mut();
    for n in 0..s.n() {
        for px in 0..p {
            let idx = |ch: usize| (n * c + ch) * p + px;
            let total: f64 = (0..c).map(|ch| data[idx(ch)]).sum();
            if total > 0.0 {
                for ch in 0..c {
                    data[idx(ch)] /= total;
                }
            }
        }
    }
    masks.round();
}

fn affinities_for(image: &Tensor, masks: &Tensor, cfg: &PamrConfig) -> Result<Tensor> {
    let (is, ms) = (image.shape(), masks.shape());
    if is.n() != ms.n() || is.h() % ms.h() != 0 || is.h() / ms.h() != is.w() / ms.w() || is.w() % ms.w() != 0 {
        return Err(Error::Invalid(format!(
            "image {:?} does not cover masks {:?} at an integer stride",
            is.dims(),
            ms.dims()
        )));
    }
    affinities(&intensity(image, is.h() / ms.h())?, cfg)
}

/// Refines per-pixel class distributions `masks` (`n×(C+1)×h×w`) guided by
/// `image` (`n×3×(f·h)×(f·w)`).
pub fn pamr(image: &Tensor, masks: &Tensor, cfg: &PamrConfig) -> Result<Tensor> {
    let aff = affinities_for(image, masks, cfg)?;
    let taps = cfg.taps();
    let mut out = masks.clone();
    for _ in 0..cfg.iterations {
        out = local_filter(&out, &aff, &taps)?;
        renormalize(&mut out);
    }
    Ok(out)
}

/// Differentiable refinement of `masks` for the optional loss on refined
/// masks. Affinities are constants; convex weights keep the simplex without
/// an explicit renormalisation.
pub fn pamr_tape(ctx: &mut Ctx<'_>, image: &Tensor, masks: Var, cfg: &PamrConfig) -> Result<Var> {
    let aff = affinities_for(image, ctx.value(masks), cfg)?;
    let aff = ctx.constant(aff);
    let taps = cfg.taps();
    let mut out = masks;
    for _ in 0..cfg.iterations {
        out = ctx.tape.local_filter(out, aff, &taps)?;
    }
    Ok(out)
}
