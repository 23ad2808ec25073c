//! Semantically consistent feature fusion.
//!
//! The deep map `F_h` is upsampled onto the shallow map's grid along a
//! learned offset field, then the two maps refine each other:
//!
//! ```text
//! off   = f_off(Cat(Up(F_h), F_l))
//! g     = aligned_upsample(F_h, off, s)
//! F_h'  = E_fuse_h(E_h(g) + E_h(g) ⊗ E_l(F_l))
//! F_l'  = E_fuse_l(E_l(F_l) + E_h(g) ⊗ E_l(F_l))
//! out   = E_out(F_h' + F_l')
//! ```
//!
//! `f_off` is a single linear 3×3 convolution so offsets may take either
//! sign. Offsets are in high-resolution pixels.

use rand::Rng;
use wsfcn_tensor::{Conv2dSpec, Var};

use crate::error::{Error, Result};
use crate::nn::{Ctx, Init};

pub const OFFSET: &str = "sf2.offset";
pub const EMBED_H: &str = "sf2.embed_h";
pub const EMBED_L: &str = "sf2.embed_l";
pub const FUSE_H: &str = "sf2.fuse_h";
pub const FUSE_L: &str = "sf2.fuse_l";
pub const OUT: &str = "sf2.out";

/// Initial scale of the offset head relative to He initialisation, so that
/// training starts close to plain bilinear upsampling.
pub const OFFSET_INIT_GAIN: f64 = 0.1;

pub fn init<R: Rng>(init: &mut Init<'_, R>, d2: usize) -> Result<()> {
    init.conv(OFFSET, 2, 2 * d2, (3, 3), true, OFFSET_INIT_GAIN)?;
    for prefix in [EMBED_H, EMBED_L, FUSE_H, FUSE_L, OUT] {
        init.conv_bn(prefix, d2, d2, 3)?;
    }
    Ok(())
}

/// Integer stride `s` with `F_l = s · F_h` on both spatial axes.
pub fn stride(ctx: &Ctx<'_>, fh: Var, fl: Var) -> Result<usize> {
    let (h, l) = (ctx.value(fh).shape(), ctx.value(fl).shape());
    let ok = l.h() % h.h() == 0 && l.w() % h.w() == 0 && l.h() / h.h() == l.w() / h.w();
    if !ok || l.h() < h.h() {
        return Err(Error::Invalid(format!(
            "low-level map {}×{} is not an integer multiple of high-level map {}×{}",
            l.h(),
            l.w(),
            h.h(),
            h.w()
        )));
    }
    if h.n() != l.n() || h.c() != l.c() {
        return Err(Error::Invalid(format!(
            "feature maps disagree: {:?} vs {:?}",
            h.dims(),
            l.dims()
        )));
    }
    Ok(l.h() / h.h())
}

pub fn predict_offset(ctx: &mut Ctx<'_>, fh: Var, fl: Var) -> Result<Var> {
    stride(ctx, fh, fl)?;
    let s = ctx.value(fl).shape();
    let up = ctx.tape.bilinear_upsample(fh, s.h(), s.w())?;
    let cat = ctx.tape.concat_channel(&[up, fl])?;
    ctx.conv(OFFSET, cat, Conv2dSpec::same(3, 3))
}

/// `γ(F_h)`: offset-guided upsampling of the deep map.
pub fn align(ctx: &mut Ctx<'_>, fh: Var, fl: Var) -> Result<Var> {
    let s = stride(ctx, fh, fl)?;
    let off = predict_offset(ctx, fh, fl)?;
    Ok(ctx.tape.aligned_upsample(fh, off, s)?)
}

/// Returns `(F_h', F_l')`.
pub fn sf2_fuse(ctx: &mut Ctx<'_>, fh: Var, fl: Var) -> Result<(Var, Var)> {
    let g = align(ctx, fh, fl)?;
    let eh = ctx.embed(EMBED_H, g)?;
    let el = ctx.embed(EMBED_L, fl)?;
    let prod = ctx.tape.broadcast_mul(eh, el)?;
    let h = ctx.tape.add(eh, prod)?;
    let l = ctx.tape.add(el, prod)?;
    let h = ctx.embed(FUSE_H, h)?;
    let l = ctx.embed(FUSE_L, l)?;
    Ok((h, l))
}

pub fn sf2_output(ctx: &mut Ctx<'_>, fh_prime: Var, fl_prime: Var) -> Result<Var> {
    let sum = ctx.tape.add(fh_prime, fl_prime)?;
    ctx.embed(OUT, sum)
}

pub fn sf2_forward(ctx: &mut Ctx<'_>, fh: Var, fl: Var) -> Result<Var> {
    let (h, l) = sf2_fuse(ctx, fh, fl)?;
    sf2_output(ctx, h, l)
}
