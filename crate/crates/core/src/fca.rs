//! Flexible context aggregation.
//!
//! A multi-scale context learning module (MCLM) runs one branch per kernel
//! size `k`. Each branch sums two ordered strip-convolution paths,
//! `k×1 ∘ 1×k` and `1×k ∘ k×1`, then recalibrates channels with a sigmoid
//! gate computed from average- and max-pooled descriptors. The branches are
//! concatenated and embedded back to `d2` channels. A spatial recalibration
//! module (SRM) then reweights pixels from channel-pooled statistics and adds
//! the result back to its input.
//!
//! Parameter names:
//!
//! | name                                | shape            |
//! |-------------------------------------|------------------|
//! | `fca.branch{i}.rc1.weight`          | `d2×d1×1×k`      |
//! | `fca.branch{i}.rc2.weight`          | `d2×d2×k×1`      |
//! | `fca.branch{i}.cr1.weight`          | `d2×d1×k×1`      |
//! | `fca.branch{i}.cr2.weight`          | `d2×d2×1×k`      |
//! | `fca.attn{i}.weight` / `.bias`      | `d2×d2×1×1`      |
//! | `fca.embed.weight` + `fca.embed.bn` | `d2×(|k|·d2)×3×3`|
//! | `fca.srm.weight` / `.bias`          | `1×2×3×3`        |
//!
//! With `separate_attention` the pooled paths use `fca.attn{i}.avg` and
//! `fca.attn{i}.max` instead of the shared `fca.attn{i}`.

use rand::Rng;
use wsfcn_tensor::{Conv2dSpec, PoolMode, Var};

use crate::error::{Error, Result};
use crate::nn::{weight_name, Ctx, Init};

#[derive(Clone, Debug, PartialEq)]
pub struct FcaConfig {
    pub kernel_sizes: Vec<usize>,
    /// `d1`, channels of the incoming feature map.
    pub in_channels: usize,
    /// `d2`, channels of every branch and of the output.
    pub branch_channels: usize,
    pub separate_attention: bool,
}

impl FcaConfig {
    pub fn new(in_channels: usize, branch_channels: usize) -> Self {
        FcaConfig {
            kernel_sizes: vec![1, 3, 5, 7],
            in_channels,
            branch_channels,
            separate_attention: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_sizes.is_empty() {
            return Err(Error::Config("kernel_sizes must not be empty".into()));
        }
        if let Some(k) = self.kernel_sizes.iter().find(|&&k| k == 0 || k % 2 == 0) {
            return Err(Error::Config(format!("kernel size {k} must be odd and positive")));
        }
        if self.in_channels == 0 || self.branch_channels == 0 {
            return Err(Error::Config("FCA channel widths must be positive".into()));
        }
        Ok(())
    }
}

/// The two strip orders: `rc` applies `1×k` then `k×1`, `cr` the reverse.
pub const PATHS: [&str; 2] = ["rc", "cr"];

pub fn strip_prefix(branch: usize, path: &str, stage: usize) -> String {
    format!("fca.branch{branch}.{path}{stage}")
}

fn strip_kernel(path: &str, stage: usize, k: usize) -> (usize, usize) {
    match (path, stage) {
        ("rc", 1) | ("cr", 2) => (1, k),
        _ => (k, 1),
    }
}

fn attn_prefixes(cfg: &FcaConfig, branch: usize) -> [String; 2] {
    if cfg.separate_attention {
        [format!("fca.attn{branch}.avg"), format!("fca.attn{branch}.max")]
    } else {
        [format!("fca.attn{branch}"), format!("fca.attn{branch}")]
    }
}

/// Registers the MCLM and SRM parameters.
pub fn init<R: Rng>(init: &mut Init<'_, R>, cfg: &FcaConfig) -> Result<()> {
    init_mclm(init, cfg)?;
    init_srm(init)
}

pub fn init_mclm<R: Rng>(init: &mut Init<'_, R>, cfg: &FcaConfig) -> Result<()> {
    cfg.validate()?;
    let (d1, d2) = (cfg.in_channels, cfg.branch_channels);
    for (i, &k) in cfg.kernel_sizes.iter().enumerate() {
        for path in PATHS {
            for stage in [1, 2] {
                let in_c = if stage == 1 { d1 } else { d2 };
                init.conv(&strip_prefix(i, path, stage), d2, in_c, strip_kernel(path, stage, k), false, 1.0)?;
            }
        }
        let [a, m] = attn_prefixes(cfg, i);
        init.conv(&a, d2, d2, (1, 1), true, 1.0)?;
        if cfg.separate_attention {
            init.conv(&m, d2, d2, (1, 1), true, 1.0)?;
        }
    }
    init.conv_bn("fca.embed", d2, d2 * cfg.kernel_sizes.len(), 3)
}

pub fn init_srm<R: Rng>(init: &mut Init<'_, R>) -> Result<()> {
    init.conv("fca.srm", 1, 2, (3, 3), true, 1.0)
}

fn strip_conv(ctx: &mut Ctx<'_>, branch: usize, path: &str, stage: usize, k: usize, x: Var) -> Result<Var> {
    let (kh, kw) = strip_kernel(path, stage, k);
    ctx.conv(&strip_prefix(branch, path, stage), x, Conv2dSpec::same(kh, kw))
}

/// `F^{k_i}`: the sum of both strip orders for branch `i`.
pub fn mclm_branch(ctx: &mut Ctx<'_>, fx: Var, cfg: &FcaConfig, branch: usize) -> Result<Var> {
    let k = *cfg
        .kernel_sizes
        .get(branch)
        .ok_or_else(|| Error::Invalid(format!("no FCA branch {branch}")))?;
    let mut paths = [fx; 2];
    for (out, path) in paths.iter_mut().zip(PATHS) {
        let y = strip_conv(ctx, branch, path, 1, k, fx)?;
        *out = strip_conv(ctx, branch, path, 2, k, y)?;
    }
    Ok(ctx.tape.add(paths[0], paths[1])?)
}

/// Channel gate `M_c = σ(f(GAP_s(F)) + f(GMP_s(F)))` and `F' = M_c ⊛ F`.
pub fn channel_attention(ctx: &mut Ctx<'_>, fk: Var, cfg: &FcaConfig, branch: usize) -> Result<(Var, Var)> {
    let [a, m] = attn_prefixes(cfg, branch);
    let avg = ctx.tape.global_pool_spatial(fk, PoolMode::Avg)?;
    let max = ctx.tape.global_pool_spatial(fk, PoolMode::Max)?;
    let avg = ctx.conv(&a, avg, Conv2dSpec::default())?;
    let max = ctx.conv(&m, max, Conv2dSpec::default())?;
    let logits = ctx.tape.add(avg, max)?;
    let gate = ctx.tape.sigmoid(logits)?;
    let out = ctx.tape.broadcast_mul(fk, gate)?;
    Ok((gate, out))
}

/// `F^com = E(Cat(F^{k_1'}, …))`.
pub fn mclm(ctx: &mut Ctx<'_>, fx: Var, cfg: &FcaConfig) -> Result<Var> {
    let mut parts = Vec::with_capacity(cfg.kernel_sizes.len());
    for i in 0..cfg.kernel_sizes.len() {
        let fk = mclm_branch(ctx, fx, cfg, i)?;
        parts.push(channel_attention(ctx, fk, cfg, i)?.1);
    }
    let cat = ctx.tape.concat_channel(&parts)?;
    ctx.conv_bn_relu("fca.embed", cat, Conv2dSpec::same(3, 3))
}

/// Spatial gate `M_s = σ(f^{3×3}(Cat(GAP_c, GMP_c)))`; returns `(M_s, M_s ⊗ F + F)`.
pub fn srm(ctx: &mut Ctx<'_>, fcom: Var) -> Result<(Var, Var)> {
    let avg = ctx.tape.global_pool_channel(fcom, PoolMode::Avg)?;
    let max = ctx.tape.global_pool_channel(fcom, PoolMode::Max)?;
    let cat = ctx.tape.concat_channel(&[avg, max])?;
    let logits = ctx.conv("fca.srm", cat, Conv2dSpec::same(3, 3))?;
    let gate = ctx.tape.sigmoid(logits)?;
    let scaled = ctx.tape.broadcast_mul(fcom, gate)?;
    Ok((gate, ctx.tape.add(scaled, fcom)?))
}

pub fn fca_forward(ctx: &mut Ctx<'_>, fx: Var, cfg: &FcaConfig) -> Result<Var> {
    let fcom = mclm(ctx, fx, cfg)?;
    Ok(srm(ctx, fcom)?.1)
}

/// Strip-kernel coefficients of branch `i` per (input, output) channel pair,
/// read from the registered weights.
pub fn strip_coefficients_per_pair(store: &wsfcn_tensor::ParamStore, branch: usize) -> Result<usize> {
    let mut total = 0;
    for path in PATHS {
        for stage in [1, 2] {
            let [_, _, kh, kw] = store.value(&weight_name(&strip_prefix(branch, path, stage)))?.shape().dims();
            total += kh * kw;
        }
    }
    Ok(total)
}
