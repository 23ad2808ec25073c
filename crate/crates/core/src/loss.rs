//! Self-supervision targets and the two training losses.

use wsfcn_tensor::ops::BalancedCe;
use wsfcn_tensor::{Tensor, Var};

use crate::error::{Error, Result};
use crate::model::IGNORE;
use crate::nn::Ctx;

/// Checks that `labels` is a multi-hot `n×C×1×1` tensor.
pub fn check_labels(labels: &Tensor, n: usize, classes: usize) -> Result<()> {
    let s = labels.shape();
    if s.dims() != [n, classes, 1, 1] {
        return Err(Error::Invalid(format!(
            "labels {:?} do not match {n} images of {classes} classes",
            s.dims()
        )));
    }
    if let Some(v) = labels.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::Invalid(format!("label value {v} is not 0 or 1")));
    }
    Ok(())
}

/// Per-pixel labels from refined masks: foreground channels absent from the
/// image labels are dropped, then each pixel takes its most probable class
/// if that probability reaches `tau` and [`IGNORE`] otherwise.
pub fn pseudo_mask(refined: &Tensor, labels: &Tensor, tau: f64) -> Result<Vec<u8>> {
    let s = refined.shape();
    check_labels(labels, s.n(), s.c() - 1)?;
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Invalid(format!("tau {tau} outside (0, 1)")));
    }
    let (c, p) = (s.c(), s.plane());
    let mut out = Vec::with_capacity(s.n() * p);
    for n in 0..s.n() {
        let present: Vec<usize> = (0..c)
            .filter(|&ch| ch == 0 || labels.at(n, ch - 1, 0, 0) == 1.0)
            .collect();
        for px in 0..p {
            let mut best = (0, f64::NEG_INFINITY);
            for &ch in &present {
                let v = refined.data()[(n * c + ch) * p + px];
                if v > best.1 {
                    best = (ch, v);
                }
            }
            out.push(if best.1 >= tau { best.0 as u8 } else { IGNORE });
        }
    }
    Ok(out)
}

/// Mean binary cross-entropy of `n×C×1×1` class scores.
pub fn classification_loss(ctx: &mut Ctx<'_>, scores: Var, labels: &Tensor) -> Result<Var> {
    let s = ctx.value(scores).shape();
    check_labels(labels, s.n(), s.c())?;
    Ok(ctx.tape.bce_with_logits(scores, labels)?)
}

/// Class-balanced cross-entropy of the mask logits against detached pseudo
/// labels. `info.counted == 0` flags a map without any supervised pixel; the
/// loss is then zero.
pub fn segmentation_loss(ctx: &mut Ctx<'_>, mask_logits: Var, pseudo: &[u8]) -> Result<(Var, BalancedCe)> {
    let s = ctx.value(mask_logits).shape();
    if pseudo.len() != s.n() * s.plane() {
        return Err(Error::Invalid(format!(
            "pseudo labels hold {} pixels, logits {}",
            pseudo.len(),
            s.n() * s.plane()
        )));
    }
    Ok(ctx.tape.balanced_cross_entropy(mask_logits, pseudo, IGNORE)?)
}

/// The same loss applied to already normalised probabilities.
pub fn segmentation_loss_on_probs(ctx: &mut Ctx<'_>, probs: Var, pseudo: &[u8]) -> Result<(Var, BalancedCe)> {
    let floor = ctx.tape.add_scalar(probs, 1e-12)?;
    let log = ctx.tape.ln(floor)?;
    segmentation_loss(ctx, log, pseudo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use wsfcn_tensor::{DType, Shape, Tensor};

    #[test]
    fn label_checks() {
        let s = Shape::new(2, 3, 1, 1).unwrap();
        check_labels(&Tensor::zeros(s, DType::F64), 2, 3).unwrap();
        assert!(check_labels(&Tensor::zeros(s, DType::F64), 1, 3).is_err());
        assert!(check_labels(&Tensor::full(s, DType::F64, 2.0), 2, 3).is_err());
    }

    #[test]
    fn pseudo_labels_threshold_inclusively() {
        let refined = Tensor::from_vec([1, 2, 1, 2], vec![0.4, 0.7, 0.6, 0.3]).unwrap();
        let labels = Tensor::from_vec([1, 1, 1, 1], vec![1.0]).unwrap();
        assert_eq!(pseudo_mask(&refined, &labels, 0.6).unwrap(), vec![1, 0]);
        assert_eq!(pseudo_mask(&refined, &labels, 0.65).unwrap(), vec![IGNORE, 0]);
        assert!(pseudo_mask(&refined, &labels, 0.0).is_err());
    }
}
