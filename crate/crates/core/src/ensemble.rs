//! Multi-scale and flip inference, false-positive class removal and the
//! evaluation loop.

use wsfcn_tensor::ops::bilinear_upsample;
use wsfcn_tensor::{DType, ParamStore, Tensor};

use crate::data::{image_tensor, Sample};
use crate::error::{Error, Result};
use crate::metrics::ConfusionMatrix;
use crate::model::{ModelConfig, IGNORE, MASK_STRIDE, OUTPUT_STRIDE};
use crate::pamr::renormalize;
use crate::segnet::infer_masks;

#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleConfig {
    pub scales: Vec<f64>,
    pub flip: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            scales: vec![1.0],
            flip: false,
        }
    }
}

impl EnsembleConfig {
    /// Multi-scale plus flip protocol.
    pub fn multi_scale() -> Self {
        EnsembleConfig {
            scales: vec![1.0, 0.5, 1.5, 2.0],
            flip: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Config("at least one inference scale is required".into()));
        }
        if let Some(s) = self.scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(Error::Config(format!("inference scale {s} must be positive")));
        }
        Ok(())
    }
}

/// `len · scale` rounded up to a multiple of the output stride.
pub fn scaled_extent(len: usize, scale: f64) -> usize {
    let raw = (len as f64 * scale).round().max(1.0) as usize;
    raw.div_ceil(OUTPUT_STRIDE) * OUTPUT_STRIDE
}

/// Distinct `(height, width, flipped)` passes in first-seen order.
pub fn passes(h: usize, w: usize, cfg: &EnsembleConfig) -> Vec<(usize, usize, bool)> {
    let mut out = Vec::new();
    for &s in &cfg.scales {
        for flip in [false, true] {
            if flip && !cfg.flip {
                continue;
            }
            let p = (scaled_extent(h, s), scaled_extent(w, s), flip);
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Averaged softmax masks at `H/4 × W/4` for a `1×3×H×W` image.
pub fn ensemble_infer(store: &ParamStore, image: &Tensor, model: &ModelConfig, cfg: &EnsembleConfig) -> Result<Tensor> {
    cfg.validate()?;
    let s = image.shape();
    if s.h() % OUTPUT_STRIDE != 0 || s.w() % OUTPUT_STRIDE != 0 {
        return Err(Error::Invalid(format!(
            "image extents {}×{} must be multiples of {OUTPUT_STRIDE}",
            s.h(),
            s.w()
        )));
    }
    let (rh, rw) = (s.h() / MASK_STRIDE, s.w() / MASK_STRIDE);
    let mut acc: Option<Tensor> = None;
    let all = passes(s.h(), s.w(), cfg);
    let count = all.len();
    for (h, w, flip) in all {
        let mut x = if (h, w) == (s.h(), s.w()) {
            image.clone()
        } else {
            bilinear_upsample(image, h, w)?
        };
        if flip {
            x = x.flip_horizontal();
        }
        let mut m = infer_masks(store, &x, model)?;
        if flip {
            m = m.flip_horizontal();
        }
        if (m.shape().h(), m.shape().w()) != (rh, rw) {
            m = bilinear_upsample(&m, rh, rw)?;
        }
        if count == 1 {
            return Ok(m);
        }
        match acc.as_mut() {
            None => acc = Some(m),
            Some(a) => a.add_assign(&m)?,
        }
    }
    let mut avg = acc.expect("at least one pass").map(|v| v / count as f64);
    renormalize(&mut avg);
    Ok(avg)
}

/// Zeroes foreground channels of classes absent from the `1×C×1×1` labels
/// and renormalises each pixel.
pub fn filter_false_positive_classes(masks: &Tensor, labels: &Tensor) -> Result<Tensor> {
    let s = masks.shape();
    crate::loss::check_labels(labels, s.n(), s.c() - 1)?;
    let mut out = Tensor::from_fn(s, masks.dtype(), |n, c, y, x| {
        if c > 0 && labels.at(n, c - 1, 0, 0) == 0.0 {
            0.0
        } else {
            masks.at(n, c, y, x)
        }
    });
    renormalize(&mut out);
    Ok(out)
}

/// Per-pixel argmax of `masks` (first channel wins ties) after resizing to
/// `h × w`.
pub fn predict_labels(masks: &Tensor, h: usize, w: usize) -> Result<Vec<u8>> {
    let s = masks.shape();
    let up = if (s.h(), s.w()) == (h, w) {
        masks.clone()
    } else {
        bilinear_upsample(masks, h, w)?
    };
    let (c, p) = (s.c(), h * w);
    let mut out = Vec::with_capacity(s.n() * p);
    for n in 0..s.n() {
        for px in 0..p {
            let mut best = (0, f64::NEG_INFINITY);
            for ch in 0..c {
                let v = up.data()[(n * c + ch) * p + px];
                if v > best.1 {
                    best = (ch, v);
                }
            }
            out.push(best.0 as u8);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub ensemble: EnsembleConfig,
    pub filter_fp: bool,
}

/// Predicted label map for one sample.
pub fn predict_sample(store: &ParamStore, sample: &Sample, model: &ModelConfig, opts: &EvalOptions) -> Result<Vec<u8>> {
    let image = image_tensor(&sample.image, DType::F32)?;
    let mut masks = ensemble_infer(store, &image, model, &opts.ensemble)?;
    if opts.filter_fp {
        let labels = sample.label_tensor(model.classes)?;
        masks = filter_false_positive_classes(&masks, &labels)?;
    }
    predict_labels(&masks, sample.image.height, sample.image.width)
}

/// Confusion matrix over `samples`; images are processed in parallel when
/// enabled and merged in order.
pub fn evaluate(store: &ParamStore, samples: &[Sample], model: &ModelConfig, opts: &EvalOptions) -> Result<ConfusionMatrix> {
    let per_image = crate::par::map(samples, |s| -> Result<ConfusionMatrix> {
        let gt = s
            .mask
            .as_ref()
            .ok_or_else(|| Error::Invalid(format!("{} has no ground-truth mask", s.name)))?;
        let pred = predict_sample(store, s, model, opts)?;
        let mut cm = ConfusionMatrix::new(model.classes + 1, IGNORE);
        cm.accumulate(&pred, &gt.data)?;
        Ok(cm)
    });
    let mut total = ConfusionMatrix::new(model.classes + 1, IGNORE);
    for cm in per_image {
        total.merge(&cm?)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extents_round_up_to_the_stride() {
        assert_eq!(scaled_extent(80, 1.0), 80);
        assert_eq!(scaled_extent(80, 0.5), 40);
        assert_eq!(scaled_extent(80, 1.5), 120);
        assert_eq!(scaled_extent(60, 1.0), 64);
        assert_eq!(scaled_extent(4, 0.1), 8);
    }

    #[test]
    fn duplicate_passes_are_dropped() {
        let cfg = EnsembleConfig {
            scales: vec![1.0, 1.0, 1.005],
            flip: true,
        };
        assert_eq!(passes(64, 64, &cfg), vec![(64, 64, false), (64, 64, true)]);
        assert_eq!(passes(80, 80, &EnsembleConfig::multi_scale()).len(), 8);
    }
}
