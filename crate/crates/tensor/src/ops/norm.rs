//! Batch normalization over the `n·h·w` elements of each channel.

use crate::error::{Result, TensorError};
use crate::tensor::{Shape, Tensor};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Running statistics of one batchnorm layer, each `1×c×1×1`.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl BnStats {
    /// Mean 0, variance 1.
    pub fn identity(channels: usize, dtype: crate::DType) -> Result<Self> {
        let shape = Shape::new(1, channels, 1, 1)?;
        Ok(BnStats {
            mean: Tensor::zeros(shape, dtype),
            var: Tensor::full(shape, dtype, 1.0),
        })
    }
}

pub(crate) struct BnForward {
    pub output: Tensor,
    /// Normalized input `x̂`.
    pub normalized: Vec<f64>,
    pub inv_std: Vec<f64>,
    /// Updated running statistics (training mode only).
    pub updated: Option<BnStats>,
}

fn check(input: &Tensor, gamma: &Tensor, beta: &Tensor, stats: &BnStats) -> Result<()> {
    let c = input.shape().c();
    for (t, dim) in [
        (gamma, "gamma length"),
        (beta, "beta length"),
        (&stats.mean, "running mean length"),
        (&stats.var, "running variance length"),
    ] {
        if t.shape().numel() != c {
            return Err(TensorError::mismatch("batchnorm", dim, c, t.shape().numel()));
        }
    }
    Ok(())
}

pub(crate) fn batchnorm_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &BnStats,
    training: bool,
) -> Result<BnForward> {
    check(input, gamma, beta, stats)?;
    let s = input.shape();
    let (c, p) = (s.c(), s.plane());
    let count = s.n() * p;
    if training && count < 2 {
        return Err(TensorError::DegenerateStatistics);
    }
    let x = input.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    if training {
        for ch in 0..c {
            let mut acc = 0.0;
            for n in 0..s.n() {
                let start = (n * c + ch) * p;
                acc += x[start..start + p].iter().sum::<f64>();
            }
            mean[ch] = acc / count as f64;
            let mut sq = 0.0;
            for n in 0..s.n() {
                let start = (n * c + ch) * p;
                sq += x[start..start + p]
                    .iter()
                    .map(|v| (v - mean[ch]) * (v - mean[ch]))
                    .sum::<f64>();
            }
            var[ch] = sq / count as f64;
        }
    } else {
        mean.copy_from_slice(stats.mean.data());
        var.copy_from_slice(stats.var.data());
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
    let mut normalized = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    for n in 0..s.n() {
        for ch in 0..c {
            let start = (n * c + ch) * p;
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for i in start..start + p {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                normalized[i] = xh;
                out[i] = g * xh + b;
            }
        }
    }
    let updated = training.then(|| {
        let unbiased = count as f64 / (count - 1) as f64;
        let m = BN_MOMENTUM;
        BnStats {
            mean: stats.mean.zip_map_unchecked(&mean, |r, v| (1.0 - m) * r + m * v),
            var: stats
                .var
                .zip_map_unchecked(&var, |r, v| (1.0 - m) * r + m * v * unbiased),
        }
    });
    Ok(BnForward {
        output: Tensor::from_raw(s, input.dtype(), out),
        normalized,
        inv_std,
        updated,
    })
}

pub(crate) struct BnGrads {
    pub input: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

pub(crate) fn batchnorm_backward(
    shape: Shape,
    gamma: &Tensor,
    normalized: &[f64],
    inv_std: &[f64],
    training: bool,
    grad_out: &Tensor,
) -> BnGrads {
    let (c, p) = (shape.c(), shape.plane());
    let count = (shape.n() * p) as f64;
    let g = grad_out.data();
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for n in 0..shape.n() {
        for ch in 0..c {
            let start = (n * c + ch) * p;
            for i in start..start + p {
                sum_g[ch] += g[i];
                sum_gx[ch] += g[i] * normalized[i];
            }
        }
    }
    let mut gin = vec![0.0; g.len()];
    for n in 0..shape.n() {
        for ch in 0..c {
            let start = (n * c + ch) * p;
            let scale = gamma.data()[ch] * inv_std[ch];
            for i in start..start + p {
                gin[i] = if training {
                    scale * (g[i] - sum_g[ch] / count - normalized[i] * sum_gx[ch] / count)
                } else {
                    scale * g[i]
                };
            }
        }
    }
    BnGrads {
        input: gin,
        gamma: sum_gx,
        beta: sum_g,
    }
}

impl Tensor {
    fn zip_map_unchecked(&self, other: &[f64], f: impl Fn(f64, f64) -> f64) -> Tensor {
        let data = self.data().iter().zip(other).map(|(&a, &b)| f(a, b)).collect();
        Tensor::from_raw(self.shape(), self.dtype(), data)
    }
}

/// Applies batchnorm outside of a tape. Returns the output and, in training
/// mode, the updated running statistics.
pub fn batchnorm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    stats: &BnStats,
    training: bool,
) -> Result<(Tensor, Option<BnStats>)> {
    let f = batchnorm_forward(input, gamma, beta, stats, training)?;
    Ok((f.output, f.updated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DType;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine(c: usize, g: f64, b: f64) -> (Tensor, Tensor) {
        let s = Shape::new(1, c, 1, 1).unwrap();
        (Tensor::full(s, DType::F64, g), Tensor::full(s, DType::F64, b))
    }

    fn channel_moments(t: &Tensor, ch: usize) -> (f64, f64) {
        let s = t.shape();
        let vals: Vec<f64> = (0..s.n()).flat_map(|n| t.plane(n, ch).to_vec()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        (m, v)
    }

    #[test]
    fn training_mode_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::randn(Shape::new(3, 4, 5, 5).unwrap(), DType::F64, 2.5, &mut rng)
            .map(|v| v + 7.0);
        let (g, b) = affine(4, 1.0, 0.0);
        let stats = BnStats::identity(4, DType::F64).unwrap();
        let (y, updated) = batchnorm(&x, &g, &b, &stats, true).unwrap();
        for ch in 0..4 {
            let (m, v) = channel_moments(&y, ch);
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-5);
        }
        let updated = updated.unwrap();
        let (m0, _) = channel_moments(&x, 0);
        assert!((updated.mean.data()[0] - 0.1 * m0).abs() < 1e-12);
    }

    #[test]
    fn affine_parameters_set_output_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::randn(Shape::new(2, 3, 6, 6).unwrap(), DType::F64, 1.0, &mut rng);
        let (g, b) = affine(3, 2.0, 3.0);
        let stats = BnStats::identity(3, DType::F64).unwrap();
        let (y, _) = batchnorm(&x, &g, &b, &stats, true).unwrap();
        for ch in 0..3 {
            let (m, v) = channel_moments(&y, ch);
            assert!((m - 3.0).abs() < 1e-4);
            assert!((v.sqrt() - 2.0).abs() < 1e-4);
        }
    }

    #[test]
    fn eval_mode_with_unit_stats_is_affine() {
        let x = Tensor::from_vec([1, 2, 1, 2], vec![1.0, -2.0, 0.5, 4.0]).unwrap();
        let (g, b) = affine(2, 1.5, -0.25);
        let stats = BnStats::identity(2, DType::F64).unwrap();
        let (y, updated) = batchnorm(&x, &g, &b, &stats, false).unwrap();
        assert!(updated.is_none());
        for (xv, yv) in x.data().iter().zip(y.data()) {
            // The variance epsilon perturbs the affine map at the 1e-5 level.
            let expected = 1.5 * xv - 0.25;
            assert!((yv - expected).abs() <= 1e-5 * expected.abs().max(1.0));
        }
    }

    #[test]
    fn single_element_statistics_are_rejected() {
        let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
        let (g, b) = affine(2, 1.0, 0.0);
        let stats = BnStats::identity(2, DType::F64).unwrap();
        assert!(matches!(
            batchnorm(&x, &g, &b, &stats, true),
            Err(TensorError::DegenerateStatistics)
        ));
        assert!(batchnorm(&x, &g, &b, &stats, false).is_ok());
    }
}
