//! The single-stage segmentation network.
//!
//! ```text
//! image ─ backbone ─┬─ F_x (1/8) ─ head (variant) ─┐
//!                   └─ F_l (1/4) ──────────────────┴─ gate ─ cls 1×1 ─ mask logits
//! ```
//!
//! Mask logits have `C + 1` channels with channel 0 the background. Class
//! scores pool each foreground logit map weighted by its own softmax mask.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wsfcn_tensor::{Conv2dSpec, DType, ParamStore, PoolMode, Shape, Tensor, Var};

use crate::error::{Error, Result};
use crate::fca::{self, FcaConfig};
use crate::nn::{Ctx, Init};
use crate::pamr::PamrConfig;
use crate::sf2;

/// Channel widths of the stem and the three stages.
pub const BACKBONE_WIDTHS: [usize; 4] = [16, 32, 64, 64];
/// `d1`, channels of the high-level tap.
pub const D1: usize = BACKBONE_WIDTHS[3];
/// Input extents must be multiples of this.
pub const OUTPUT_STRIDE: usize = 8;
/// Stride of the mask logits relative to the image.
pub const MASK_STRIDE: usize = 4;
/// `ε` in the normalised class-score pooling.
pub const SCORE_EPS: f64 = 1e-4;
pub const IGNORE: u8 = 255;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Baseline,
    FcaMclm,
    FcaFull,
    Sf2,
    Full,
    FuseSum,
    FuseMul,
    FuseConcat,
}

impl Variant {
    pub const ALL: [Variant; 8] = [
        Variant::Baseline,
        Variant::FcaMclm,
        Variant::FcaFull,
        Variant::Sf2,
        Variant::Full,
        Variant::FuseSum,
        Variant::FuseMul,
        Variant::FuseConcat,
    ];

    /// The rows of the module ablation.
    pub const ABLATION: [Variant; 5] = [
        Variant::Baseline,
        Variant::FcaMclm,
        Variant::FcaFull,
        Variant::Sf2,
        Variant::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::FcaMclm => "+fca_mclm",
            Variant::FcaFull => "+fca_full",
            Variant::Sf2 => "+sf2",
            Variant::Full => "full",
            Variant::FuseSum => "fuse_sum",
            Variant::FuseMul => "fuse_mul",
            Variant::FuseConcat => "fuse_concat",
        }
    }

    pub fn uses_fca(self) -> bool {
        matches!(self, Variant::FcaMclm | Variant::FcaFull | Variant::Full)
    }

    pub fn uses_srm(self) -> bool {
        matches!(self, Variant::FcaFull | Variant::Full)
    }

    pub fn uses_sf2(self) -> bool {
        matches!(self, Variant::Sf2 | Variant::Full)
    }

    /// Whether the low-level tap feeds the head.
    pub fn uses_low_level(self) -> bool {
        !matches!(self, Variant::Baseline | Variant::FcaMclm | Variant::FcaFull)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let known: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::Config(format!("unknown variant `{s}` (expected one of {})", known.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Foreground classes `C`.
    pub classes: usize,
    pub d2: usize,
    pub kernel_sizes: Vec<usize>,
    pub separate_attention: bool,
    pub keep_prob: f64,
    pub tau: f64,
    pub pamr: PamrConfig,
    /// Learning-rate multiplier of the `fca.*` and `sf2.*` groups.
    pub lr_multiplier: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::Full,
            classes: 4,
            d2: 32,
            kernel_sizes: vec![1, 3, 5, 7],
            separate_attention: false,
            keep_prob: 0.7,
            tau: 0.6,
            pamr: PamrConfig::default(),
            lr_multiplier: 20.0,
        }
    }
}

impl ModelConfig {
    pub fn fca(&self) -> FcaConfig {
        FcaConfig {
            kernel_sizes: self.kernel_sizes.clone(),
            in_channels: D1,
            branch_channels: self.d2,
            separate_attention: self.separate_attention,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes >= IGNORE as usize {
            return Err(Error::Config(format!("classes must be in 1..{}", IGNORE)));
        }
        if self.d2 == 0 {
            return Err(Error::Config("d2 must be positive".into()));
        }
        if !(self.keep_prob > 0.0 && self.keep_prob <= 1.0) {
            return Err(Error::Config(format!("keep_prob {} outside (0, 1]", self.keep_prob)));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau {} outside (0, 1)", self.tau)));
        }
        if !(self.lr_multiplier > 0.0) {
            return Err(Error::Config("lr_multiplier must be positive".into()));
        }
        self.pamr.validate()?;
        self.fca().validate()
    }
}

/// Independent initialisation streams, so that shared modules start from the
/// same weights in every variant.
#[derive(Clone, Copy)]
enum Stream {
    Backbone = 1,
    Head = 2,
    Fca = 3,
    Sf2 = 4,
}

fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Registers every parameter the configured variant reads.
pub fn init_params(cfg: &ModelConfig, seed: u64, dtype: DType) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let v = cfg.variant;
    let d2 = cfg.d2;

    let mut rng = stream_rng(seed, Stream::Backbone);
    let mut init = Init {
        store: &mut store,
        rng: &mut rng,
        dtype,
        lr_multiplier: 1.0,
    };
    let [w0, w1, w2, w3] = BACKBONE_WIDTHS;
    init.conv_bn("backbone.stem", w0, 3, 3)?;
    init.conv_bn("backbone.stage1.0", w1, w0, 3)?;
    init.conv_bn("backbone.stage1.1", w1, w1, 3)?;
    init.conv_bn("backbone.stage2.0", w2, w1, 3)?;
    init.conv_bn("backbone.stage2.1", w2, w2, 3)?;
    init.conv_bn("backbone.stage3.0", w3, w2, 3)?;
    if v.uses_low_level() {
        init.conv("backbone.low_proj", d2, w1, (1, 1), true, 1.0)?;
    }

    let mut rng = stream_rng(seed, Stream::Head);
    let mut init = Init {
        store: &mut store,
        rng: &mut rng,
        dtype,
        lr_multiplier: 1.0,
    };
    if !v.uses_fca() {
        init.conv_bn("head.embed", d2, D1, 3)?;
    }
    match v {
        Variant::FuseSum | Variant::FuseMul => init.conv_bn("fuse.out", d2, d2, 3)?,
        Variant::FuseConcat => init.conv_bn("fuse.out", d2, 2 * d2, 3)?,
        _ => {}
    }
    init.conv("head.cls", cfg.classes + 1, d2, (1, 1), true, 1.0)?;

    if v.uses_fca() {
        let mut rng = stream_rng(seed, Stream::Fca);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
            dtype,
            lr_multiplier: cfg.lr_multiplier,
        };
        fca::init_mclm(&mut init, &cfg.fca())?;
        if v.uses_srm() {
            fca::init_srm(&mut init)?;
        }
    }
    if v.uses_sf2() {
        let mut rng = stream_rng(seed, Stream::Sf2);
        let mut init = Init {
            store: &mut store,
            rng: &mut rng,
            dtype,
            lr_multiplier: cfg.lr_multiplier,
        };
        sf2::init(&mut init, d2)?;
    }
    Ok(store)
}

/// Returns `(F_l, F_x)`; `F_l` is projected to `d2` channels only when
/// `backbone.low_proj` is registered, otherwise it is the raw stage-1 map.
pub fn backbone_forward(ctx: &mut Ctx<'_>, image: Var) -> Result<(Var, Var)> {
    let s = ctx.value(image).shape();
    if s.c() != 3 {
        return Err(Error::Invalid(format!("expected an RGB image, got {} channels", s.c())));
    }
    if s.h() % OUTPUT_STRIDE != 0 || s.w() % OUTPUT_STRIDE != 0 {
        return Err(Error::Invalid(format!(
            "image extents {}×{} must be multiples of {OUTPUT_STRIDE}; pad the input",
            s.h(),
            s.w()
        )));
    }
    let down = Conv2dSpec::new(2, 1, 1, 1);
    let same = Conv2dSpec::same(3, 3);
    let x = ctx.conv_bn_relu("backbone.stem", image, down)?;
    let x = ctx.conv_bn_relu("backbone.stage1.0", x, down)?;
    let low = ctx.conv_bn_relu("backbone.stage1.1", x, same)?;
    let x = ctx.conv_bn_relu("backbone.stage2.0", low, down)?;
    let x = ctx.conv_bn_relu("backbone.stage2.1", x, same)?;
    let fx = ctx.conv_bn_relu("backbone.stage3.0", x, Conv2dSpec::dilated(3, 2))?;
    let fl = if ctx.store.contains("backbone.low_proj.weight") {
        ctx.conv("backbone.low_proj", low, Conv2dSpec::default())?
    } else {
        low
    };
    Ok((fl, fx))
}

/// Per-(n, c) keep mask scaled by `1 / keep_prob`.
pub fn gate_mask<R: Rng + ?Sized>(n: usize, c: usize, keep_prob: f64, dtype: DType, rng: &mut R) -> Result<Tensor> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Invalid(format!("keep_prob {keep_prob} outside (0, 1]")));
    }
    let data = (0..n * c)
        .map(|_| if rng.gen_bool(keep_prob) { 1.0 / keep_prob } else { 0.0 })
        .collect();
    Ok(Tensor::new(Shape::new(n, c, 1, 1)?, dtype, data)?)
}

/// Channel dropout: identity in eval mode or when `keep_prob = 1`.
pub fn stochastic_gate<R: Rng + ?Sized>(ctx: &mut Ctx<'_>, x: Var, keep_prob: f64, rng: &mut R) -> Result<Var> {
    if !(keep_prob > 0.0 && keep_prob <= 1.0) {
        return Err(Error::Invalid(format!("keep_prob {keep_prob} outside (0, 1]")));
    }
    if !ctx.training || keep_prob == 1.0 {
        return Ok(x);
    }
    let s = ctx.value(x).shape();
    let mask = gate_mask(s.n(), s.c(), keep_prob, ctx.value(x).dtype(), rng)?;
    let m = ctx.constant(mask);
    Ok(ctx.tape.broadcast_mul(x, m)?)
}

/// Returns `(masks, class_scores)`; scores are `n×C×1×1`.
pub fn classification_scores(ctx: &mut Ctx<'_>, logits: Var) -> Result<(Var, Var)> {
    let s = ctx.value(logits).shape();
    if s.c() < 2 {
        return Err(Error::Invalid("mask logits need a background and a class channel".into()));
    }
    let masks = ctx.tape.softmax_channel(logits)?;
    let weighted = ctx.tape.broadcast_mul(masks, logits)?;
    let num = ctx.tape.global_pool_spatial(weighted, PoolMode::Avg)?;
    let den = ctx.tape.global_pool_spatial(masks, PoolMode::Avg)?;
    let den = ctx.tape.add_scalar(den, SCORE_EPS / s.plane() as f64)?;
    let ratio = ctx.tape.div(num, den)?;
    let scores = ctx.tape.slice_channels(ratio, 1, s.c())?;
    Ok((masks, scores))
}

/// Head features at mask resolution for the configured variant.
fn head_features(ctx: &mut Ctx<'_>, cfg: &ModelConfig, fl: Var, fx: Var) -> Result<Var> {
    let v = cfg.variant;
    let high = if v.uses_srm() {
        fca::fca_forward(ctx, fx, &cfg.fca())?
    } else if v.uses_fca() {
        fca::mclm(ctx, fx, &cfg.fca())?
    } else {
        ctx.conv_bn_relu("head.embed", fx, Conv2dSpec::same(3, 3))?
    };
    if v.uses_sf2() {
        return sf2::sf2_forward(ctx, high, fl);
    }
    let s = ctx.value(fl).shape();
    let up = ctx.tape.bilinear_upsample(high, s.h(), s.w())?;
    let fused = match v {
        Variant::FuseSum => ctx.tape.add(up, fl)?,
        Variant::FuseMul => ctx.tape.broadcast_mul(up, fl)?,
        Variant::FuseConcat => ctx.tape.concat_channel(&[up, fl])?,
        _ => return Ok(up),
    };
    ctx.conv_bn_relu("fuse.out", fused, Conv2dSpec::same(3, 3))
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub mask_logits: Var,
    pub masks: Var,
    pub class_scores: Var,
}

/// Records the network up to the class scores. `rng` drives the stochastic
/// gate and is only consumed in training mode.
pub fn forward_vars<R: Rng + ?Sized>(
    ctx: &mut Ctx<'_>,
    image: Var,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<ForwardVars> {
    let (fl, fx) = backbone_forward(ctx, image)?;
    let feat = head_features(ctx, cfg, fl, fx)?;
    let feat = stochastic_gate(ctx, feat, cfg.keep_prob, rng)?;
    let mask_logits = ctx.conv("head.cls", feat, Conv2dSpec::default())?;
    let c = ctx.value(mask_logits).shape().c();
    if c != cfg.classes + 1 {
        return Err(Error::Invalid(format!(
            "head.cls produces {c} channels but {} classes are configured",
            cfg.classes
        )));
    }
    let (masks, class_scores) = classification_scores(ctx, mask_logits)?;
    Ok(ForwardVars {
        mask_logits,
        masks,
        class_scores,
    })
}

/// Checks that `store` holds exactly the variant's parameter groups.
pub fn check_variant(store: &ParamStore, cfg: &ModelConfig) -> Result<()> {
    let v = cfg.variant;
    let has = |prefix: &str| store.names().any(|n| n.starts_with(prefix));
    let groups = [
        ("fca.", v.uses_fca()),
        ("fca.srm.", v.uses_srm()),
        ("sf2.", v.uses_sf2()),
        ("head.embed.", !v.uses_fca()),
        ("fuse.", matches!(v, Variant::FuseSum | Variant::FuseMul | Variant::FuseConcat)),
        ("backbone.low_proj.", v.uses_low_level()),
    ];
    for (prefix, wanted) in groups {
        if has(prefix) != wanted {
            return Err(Error::Invalid(format!(
                "parameters {} `{prefix}*` do not fit variant {v}",
                if wanted { "lack" } else { "contain" }
            )));
        }
    }
    Ok(())
}
