//! Fused loss kernels with hand-written gradients.

use crate::error::{Result, TensorError};
use crate::ops::activation::sigmoid_scalar;
use crate::tensor::{Shape, Tensor};

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub(crate) fn check_binary_labels(scores: Shape, labels: &Tensor) -> Result<()> {
    if labels.shape() != scores {
        return Err(TensorError::invalid(
            "bce_with_logits",
            format!("labels {:?} do not match scores {:?}", labels.shape(), scores),
        ));
    }
    if let Some(bad) = labels.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(TensorError::invalid(
            "bce_with_logits",
            format!("label value {bad} is not 0 or 1"),
        ));
    }
    Ok(())
}

/// Mean binary cross-entropy with logits, `log(1 + e^{-y·x})` with
/// `y = 2·label - 1`.
pub fn bce_with_logits(scores: &Tensor, labels: &Tensor) -> Result<f64> {
    check_binary_labels(scores.shape(), labels)?;
    let total: f64 = scores
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&x, &l)| softplus(-(2.0 * l - 1.0) * x))
        .sum();
    Ok(total / scores.data().len() as f64)
}

pub(crate) fn bce_backward(scores: &Tensor, labels: &Tensor, grad: f64) -> Vec<f64> {
    let count = scores.data().len() as f64;
    scores
        .data()
        .iter()
        .zip(labels.data())
        .map(|(&x, &l)| {
            let y = 2.0 * l - 1.0;
            -y * sigmoid_scalar(-y * x) * grad / count
        })
        .collect()
}

/// Per-pixel log-softmax over channels.
fn log_softmax(logits: &Tensor) -> Vec<f64> {
    let s = logits.shape();
    let (c, p) = (s.c(), s.plane());
    let x = logits.data();
    let mut out = vec![0.0; x.len()];
    for n in 0..s.n() {
        let base = n * c * p;
        for px in 0..p {
            let max = (0..c)
                .map(|ch| x[base + ch * p + px])
                .fold(f64::NEG_INFINITY, f64::max);
            let lse = (0..c)
                .map(|ch| (x[base + ch * p + px] - max).exp())
                .sum::<f64>()
                .ln()
                + max;
            for ch in 0..c {
                out[base + ch * p + px] = x[base + ch * p + px] - lse;
            }
        }
    }
    out
}

/// Outcome of [`balanced_cross_entropy`].
#[derive(Clone, Debug, PartialEq)]
pub struct BalancedCe {
    pub loss: f64,
    /// Pixels with a label other than the ignore value.
    pub counted: usize,
    /// Pixel count per class over the whole batch.
    pub class_counts: Vec<usize>,
}

pub(crate) fn check_label_map(logits: Shape, labels: &[u8], ignore: u8) -> Result<()> {
    let expected = logits.n() * logits.plane();
    if labels.len() != expected {
        return Err(TensorError::mismatch(
            "balanced_cross_entropy",
            "label count",
            expected,
            labels.len(),
        ));
    }
    if let Some(&bad) = labels
        .iter()
        .find(|&&l| l != ignore && l as usize >= logits.c())
    {
        return Err(TensorError::invalid(
            "balanced_cross_entropy",
            format!("label {bad} outside {} classes", logits.c()),
        ));
    }
    Ok(())
}

/// Class-balanced cross-entropy of `softmax(logits)` against a per-pixel
/// label map (`n·h·w` entries, row-major). Each class present in the map
/// contributes the mean loss over its pixels; the result averages those
/// per-class means. A map with no counted pixels yields zero.
pub fn balanced_cross_entropy(logits: &Tensor, labels: &[u8], ignore: u8) -> Result<BalancedCe> {
    let s = logits.shape();
    check_label_map(s, labels, ignore)?;
    let logp = log_softmax(logits);
    let (c, p) = (s.c(), s.plane());
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (i, &l) in labels.iter().enumerate() {
        if l == ignore {
            continue;
        }
        let (n, px) = (i / p, i % p);
        let k = l as usize;
        sums[k] -= logp[(n * c + k) * p + px];
        counts[k] += 1;
    }
    let present: Vec<usize> = (0..c).filter(|&k| counts[k] > 0).collect();
    let loss = if present.is_empty() {
        0.0
    } else {
        present
            .iter()
            .map(|&k| sums[k] / counts[k] as f64)
            .sum::<f64>()
            / present.len() as f64
    };
    Ok(BalancedCe {
        loss,
        counted: counts.iter().sum(),
        class_counts: counts,
    })
}

pub(crate) fn balanced_ce_backward(
    logits: &Tensor,
    labels: &[u8],
    ignore: u8,
    class_counts: &[usize],
    grad: f64,
) -> Vec<f64> {
    let s = logits.shape();
    let (c, p) = (s.c(), s.plane());
    let present = class_counts.iter().filter(|&&k| k > 0).count();
    let mut g = vec![0.0; s.numel()];
    if present == 0 {
        return g;
    }
    let logp = log_softmax(logits);
    for (i, &l) in labels.iter().enumerate() {
        if l == ignore {
            continue;
        }
        let (n, px) = (i / p, i % p);
        let k = l as usize;
        let w = grad / (present as f64 * class_counts[k] as f64);
        for ch in 0..c {
            let j = (n * c + ch) * p + px;
            let prob = logp[j].exp();
            g[j] = w * (prob - if ch == k { 1.0 } else { 0.0 });
        }
    }
    g
}
