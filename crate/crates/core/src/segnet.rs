//! End-to-end forward pass and the training step.

use rand::Rng;
use wsfcn_tensor::{ParamStore, Tape, Tensor};

use crate::error::{Error, Result};
use crate::loss::{classification_loss, pseudo_mask, segmentation_loss, segmentation_loss_on_probs};
use crate::model::{forward_vars, ModelConfig};
use crate::nn::{apply_bn_updates, Ctx};
use crate::optim::Sgd;
use crate::pamr::{pamr, pamr_tape};

#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub mask_logits: Tensor,
    pub masks: Tensor,
    /// `n×C×1×1`, foreground classes only.
    pub class_scores: Tensor,
    pub refined_masks: Tensor,
    /// Present when image-level labels were supplied.
    pub pseudo_labels: Option<Vec<u8>>,
}

/// Runs the network, the refinement and, given labels, the pseudo labelling.
/// Training mode uses batch statistics and the stochastic gate but leaves the
/// running statistics in `store` untouched.
pub fn model_forward<R: Rng + ?Sized>(
    store: &ParamStore,
    image: &Tensor,
    labels: Option<&Tensor>,
    cfg: &ModelConfig,
    training: bool,
    rng: &mut R,
) -> Result<ModelOutput> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, &mut tape, training);
    let x = ctx.constant(image.clone());
    let vars = forward_vars(&mut ctx, x, cfg, rng)?;
    let masks = ctx.value(vars.masks).clone();
    let refined_masks = pamr(image, &masks, &cfg.pamr)?;
    let pseudo_labels = labels
        .map(|l| pseudo_mask(&refined_masks, l, cfg.tau))
        .transpose()?;
    Ok(ModelOutput {
        mask_logits: ctx.value(vars.mask_logits).clone(),
        masks,
        class_scores: ctx.value(vars.class_scores).clone(),
        refined_masks,
        pseudo_labels,
    })
}

/// Eval-mode softmax masks at mask resolution, without refinement.
pub fn infer_masks(store: &ParamStore, image: &Tensor, cfg: &ModelConfig) -> Result<Tensor> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, &mut tape, false);
    let x = ctx.constant(image.clone());
    let vars = forward_vars(&mut ctx, x, cfg, &mut rand::rngs::mock::StepRng::new(0, 0))?;
    Ok(ctx.value(vars.masks).clone())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    ClsOnly,
    ClsPlusSeg,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::ClsOnly => "cls_only",
            Phase::ClsPlusSeg => "cls_plus_seg",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub loss_cls: f64,
    /// Absent in the classification-only phase.
    pub loss_seg: Option<f64>,
    /// Pixels that carried a pseudo label.
    pub supervised_pixels: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Also supervise the refined masks with the same pseudo labels.
    pub seg_loss_refined: bool,
}

/// One optimisation step on a batch.
#[allow(clippy::too_many_arguments)]
pub fn train_step<R: Rng + ?Sized>(
    store: &mut ParamStore,
    opt: &mut Sgd,
    images: &Tensor,
    labels: &Tensor,
    phase: Phase,
    cfg: &ModelConfig,
    opts: TrainOptions,
    lr: f64,
    rng: &mut R,
) -> Result<StepReport> {
    let mut tape = Tape::new();
    let mut ctx = Ctx::new(store, &mut tape, true);
    let x = ctx.constant(images.clone());
    let vars = forward_vars(&mut ctx, x, cfg, rng)?;
    let cls = classification_loss(&mut ctx, vars.class_scores, labels)?;
    let loss_cls = ctx.value(cls).item()?;

    let mut total = cls;
    let mut loss_seg = None;
    let mut supervised_pixels = 0;
    if phase == Phase::ClsPlusSeg {
        let refined = pamr(images, ctx.value(vars.masks), &cfg.pamr)?;
        let pseudo = pseudo_mask(&refined, labels, cfg.tau)?;
        let (seg, info) = segmentation_loss(&mut ctx, vars.mask_logits, &pseudo)?;
        supervised_pixels = info.counted;
        let mut seg_total = seg;
        if opts.seg_loss_refined {
            let refined_var = pamr_tape(&mut ctx, images, vars.masks, &cfg.pamr)?;
            let (extra, _) = segmentation_loss_on_probs(&mut ctx, refined_var, &pseudo)?;
            seg_total = ctx.tape.add(seg_total, extra)?;
        }
        loss_seg = Some(ctx.value(seg_total).item()?);
        total = ctx.tape.add(total, seg_total)?;
    }
    let updates = ctx.take_bn_updates();
    if !ctx.value(total).all_finite() {
        return Err(Error::Numeric("training loss is not finite".into()));
    }
    drop(ctx);
    tape.backward(total, store)?;
    apply_bn_updates(store, updates)?;
    opt.step(store, lr);
    Ok(StepReport {
        loss_cls,
        loss_seg,
        supervised_pixels,
    })
}
