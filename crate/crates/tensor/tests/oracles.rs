mod common;

use common::*;
use rand::Rng;
use wsfcn_tensor::ops::{
    self, aligned_upsample, bilinear_upsample, broadcast_mul, concat_channel, conv2d,
    global_pool_channel, global_pool_spatial, grid_sample_bilinear, softmax_channel,
};
use wsfcn_tensor::{exec, BnStats, Conv2dSpec, DType, PoolMode, Tensor, TensorError};

#[test]
fn conv_center_of_ones_is_nine() {
    let x = Tensor::full(shape(1, 1, 3, 3), DType::F64, 1.0);
    let w = Tensor::full(shape(1, 1, 3, 3), DType::F64, 1.0);
    let y = conv2d(&x, &w, None, Conv2dSpec::same(3, 3)).unwrap();
    assert_eq!(y.at(0, 0, 1, 1), 9.0);
    assert_eq!(y.at(0, 0, 0, 0), 4.0);
}

#[test]
fn unit_pointwise_kernel_is_identity() {
    let mut r = rng(1);
    let x = randn(shape(2, 1, 5, 4), &mut r);
    let w = Tensor::full(shape(1, 1, 1, 1), DType::F64, 1.0);
    let b = Tensor::zeros(shape(1, 1, 1, 1), DType::F64);
    assert_eq!(conv2d(&x, &w, Some(&b), Conv2dSpec::default()).unwrap(), x);
}

#[test]
fn conv_matches_loop_oracle_on_reference_case() {
    let mut r = rng(2);
    let x = randn(shape(2, 3, 8, 8), &mut r);
    let w = randn(shape(4, 3, 3, 3), &mut r);
    let b = randn(shape(1, 4, 1, 1), &mut r);
    let spec = Conv2dSpec::same(3, 3);
    let got = conv2d(&x, &w, Some(&b), spec).unwrap();
    assert!(max_abs_diff(&got, &conv_oracle(&x, &w, Some(&b), spec)) < 1e-12);
}

#[test]
fn conv_matches_loop_oracle_on_random_geometries() {
    let mut r = rng(3);
    for _ in 0..60 {
        let n = r.gen_range(1..=2);
        let ic = r.gen_range(1..=4);
        let oc = r.gen_range(1..=4);
        let h = r.gen_range(3..=9);
        let w = r.gen_range(3..=9);
        let kh = r.gen_range(1..=3);
        let kw = r.gen_range(1..=3);
        let spec = Conv2dSpec::new(
            r.gen_range(1..=2),
            r.gen_range(0..=2),
            r.gen_range(0..=2),
            r.gen_range(1..=2),
        );
        if spec.output_hw(h, w, kh, kw).is_none() {
            continue;
        }
        let x = randn(shape(n, ic, h, w), &mut r);
        let wt = randn(shape(oc, ic, kh, kw), &mut r);
        let b = randn(shape(oc, 1, 1, 1), &mut r);
        let bias = r.gen_bool(0.5).then_some(&b);
        let got = conv2d(&x, &wt, bias, spec).unwrap();
        let diff = max_abs_diff(&got, &conv_oracle(&x, &wt, bias, spec));
        assert!(diff < 1e-12, "{spec:?} k={kh}x{kw} diff {diff}");
    }
}

#[test]
fn strip_kernels_match_oracle() {
    let mut r = rng(4);
    let x = randn(shape(1, 3, 9, 7), &mut r);
    for k in [1, 3, 5, 7] {
        for (kh, kw) in [(1, k), (k, 1)] {
            let w = randn(shape(2, 3, kh, kw), &mut r);
            let spec = Conv2dSpec::same(kh, kw);
            let got = conv2d(&x, &w, None, spec).unwrap();
            assert_eq!(got.shape(), shape(1, 2, 9, 7));
            assert!(max_abs_diff(&got, &conv_oracle(&x, &w, None, spec)) < 1e-12);
        }
    }
}

#[test]
fn binary32_conv_stays_close_to_oracle() {
    let mut r = rng(5);
    let x = randn(shape(2, 4, 9, 9), &mut r).to_dtype(DType::F32);
    let w = randn(shape(3, 4, 3, 3), &mut r).to_dtype(DType::F32);
    let spec = Conv2dSpec::same(3, 3);
    let got = conv2d(&x, &w, None, spec).unwrap();
    assert_eq!(got.dtype(), DType::F32);
    assert!(max_abs_diff(&got, &conv_oracle(&x, &w, None, spec)) < 1e-4);
}

#[test]
fn conv_shape_errors_name_the_dimension() {
    let x = Tensor::zeros(shape(1, 3, 4, 4), DType::F64);
    let w = Tensor::zeros(shape(2, 2, 3, 3), DType::F64);
    match conv2d(&x, &w, None, Conv2dSpec::same(3, 3)) {
        Err(TensorError::ShapeMismatch { dim, .. }) => assert!(dim.contains("channel"), "{dim}"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn parallel_and_sequential_paths_agree_bitwise() {
    let mut r = rng(6);
    let x = randn(shape(4, 8, 20, 20), &mut r);
    let w = randn(shape(8, 8, 3, 3), &mut r);
    let spec = Conv2dSpec::same(3, 3);
    exec::set_parallel(false);
    let seq = conv2d(&x, &w, None, spec).unwrap();
    exec::set_parallel(true);
    let par = conv2d(&x, &w, None, spec).unwrap();
    assert_eq!(seq, par);
}

#[test]
fn spatial_pool_hand_case() {
    let x = Tensor::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(global_pool_spatial(&x, PoolMode::Avg).data(), &[2.5]);
    assert_eq!(global_pool_spatial(&x, PoolMode::Max).data(), &[4.0]);
}

#[test]
fn channel_pool_hand_case() {
    let x = Tensor::from_vec([1, 3, 1, 1], vec![1.0, 5.0, 3.0]).unwrap();
    assert_eq!(global_pool_channel(&x, PoolMode::Avg).data(), &[3.0]);
    assert_eq!(global_pool_channel(&x, PoolMode::Max).data(), &[5.0]);
}

#[test]
fn pools_of_constant_are_constant() {
    let x = Tensor::full(shape(2, 3, 4, 5), DType::F64, -1.75);
    for mode in [PoolMode::Avg, PoolMode::Max] {
        assert!(global_pool_spatial(&x, mode).data().iter().all(|&v| v == -1.75));
        assert!(global_pool_channel(&x, mode).data().iter().all(|&v| v == -1.75));
    }
}

#[test]
fn spatial_pool_matches_loop_oracle() {
    let mut r = rng(7);
    let x = randn(shape(2, 5, 7, 7), &mut r);
    let avg = global_pool_spatial(&x, PoolMode::Avg);
    let max = global_pool_spatial(&x, PoolMode::Max);
    for n in 0..2 {
        for c in 0..5 {
            let mut sum = 0.0;
            let mut best = f64::NEG_INFINITY;
            for y in 0..7 {
                for xx in 0..7 {
                    sum += x.at(n, c, y, xx);
                    best = best.max(x.at(n, c, y, xx));
                }
            }
            assert_eq!(avg.at(n, c, 0, 0), sum / 49.0);
            assert_eq!(max.at(n, c, 0, 0), best);
        }
    }
}

#[test]
fn channel_pool_matches_loop_oracle() {
    let mut r = rng(8);
    let x = randn(shape(2, 6, 4, 4), &mut r);
    let avg = global_pool_channel(&x, PoolMode::Avg);
    let max = global_pool_channel(&x, PoolMode::Max);
    for n in 0..2 {
        for y in 0..4 {
            for xx in 0..4 {
                let mut sum = 0.0;
                let mut best = f64::NEG_INFINITY;
                for c in 0..6 {
                    sum += x.at(n, c, y, xx);
                    best = best.max(x.at(n, c, y, xx));
                }
                assert_eq!(avg.at(n, 0, y, xx), sum / 6.0);
                assert_eq!(max.at(n, 0, y, xx), best);
            }
        }
    }
}

#[test]
fn pointwise_reference_values() {
    let x = Tensor::from_vec([1, 3, 1, 1], vec![0.0, -3.0, 2.0]).unwrap();
    let s = ops::pointwise(&x, ops::Pointwise::Sigmoid);
    let r = ops::pointwise(&x, ops::Pointwise::Relu);
    assert_eq!(s.data()[0], 0.5);
    assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn softmax_reference_values() {
    let eq = softmax_channel(&Tensor::from_vec([1, 2, 1, 1], vec![0.7, 0.7]).unwrap());
    assert_eq!(eq.data(), &[0.5, 0.5]);
    let t = softmax_channel(&Tensor::from_vec([1, 2, 1, 1], vec![0.0, 3f64.ln()]).unwrap());
    assert!((t.data()[0] - 0.25).abs() < 1e-15);
    assert!((t.data()[1] - 0.75).abs() < 1e-15);
}

#[test]
fn softmax_channels_sum_to_one() {
    let mut r = rng(9);
    let x = randn(shape(1, 5, 3, 3), &mut r);
    let y = softmax_channel(&x);
    for py in 0..3 {
        for px in 0..3 {
            let sum: f64 = (0..5).map(|c| y.at(0, c, py, px)).sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn softmax_survives_huge_logits() {
    let x = Tensor::from_vec([1, 3, 1, 1], vec![1000.0, -1000.0, 999.0]).unwrap();
    let y = softmax_channel(&x);
    assert!(y.all_finite());
    assert!((y.sum() - 1.0).abs() < 1e-12);
}

fn channel_moments(t: &Tensor, c: usize) -> (f64, f64) {
    let [n, _, h, w] = t.shape().dims();
    let vals: Vec<f64> = (0..n)
        .flat_map(|s| t.plane(s, c).to_vec())
        .collect();
    let count = (n * h * w) as f64;
    let mean = vals.iter().sum::<f64>() / count;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
    (mean, var)
}

#[test]
fn batchnorm_training_standardizes() {
    let mut r = rng(10);
    let x = uniform(shape(3, 4, 5, 5), -3.0, 8.0, &mut r);
    let one = Tensor::full(shape(1, 4, 1, 1), DType::F64, 1.0);
    let zero = Tensor::zeros(shape(1, 4, 1, 1), DType::F64);
    let stats = BnStats::identity(4, DType::F64).unwrap();
    let (y, updated) = ops::batchnorm(&x, &one, &zero, &stats, true).unwrap();
    for c in 0..4 {
        let (m, v) = channel_moments(&y, c);
        assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-5, "channel {c}: {m} {v}");
    }
    assert!(updated.is_some());
}

#[test]
fn batchnorm_affine_moments() {
    let mut r = rng(11);
    let x = randn(shape(4, 2, 6, 6), &mut r);
    let g = Tensor::full(shape(1, 2, 1, 1), DType::F64, 2.0);
    let b = Tensor::full(shape(1, 2, 1, 1), DType::F64, 3.0);
    let stats = BnStats::identity(2, DType::F64).unwrap();
    let (y, _) = ops::batchnorm(&x, &g, &b, &stats, true).unwrap();
    for c in 0..2 {
        let (m, v) = channel_moments(&y, c);
        assert!((m - 3.0).abs() < 1e-4);
        assert!((v.sqrt() - 2.0).abs() < 1e-4);
    }
}

#[test]
fn batchnorm_running_stats_follow_momentum() {
    let x = Tensor::from_vec([2, 1, 1, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
    let one = Tensor::full(shape(1, 1, 1, 1), DType::F64, 1.0);
    let zero = Tensor::zeros(shape(1, 1, 1, 1), DType::F64);
    let stats = BnStats::identity(1, DType::F64).unwrap();
    let (_, updated) = ops::batchnorm(&x, &one, &zero, &stats, true).unwrap();
    let updated = updated.unwrap();
    // batch mean 4, unbiased variance 20/3
    assert!((updated.mean.data()[0] - 0.4).abs() < 1e-15);
    assert!((updated.var.data()[0] - (0.9 + 0.1 * 20.0 / 3.0)).abs() < 1e-15);
}

#[test]
fn batchnorm_eval_with_identity_stats_is_affine() {
    let mut r = rng(12);
    let x = randn(shape(2, 3, 4, 4), &mut r);
    let g = randn(shape(1, 3, 1, 1), &mut r);
    let b = randn(shape(1, 3, 1, 1), &mut r);
    let stats = BnStats::identity(3, DType::F64).unwrap();
    let (y, updated) = ops::batchnorm(&x, &g, &b, &stats, false).unwrap();
    assert!(updated.is_none());
    for n in 0..2 {
        for c in 0..3 {
            for (i, (&yv, &xv)) in y.plane(n, c).iter().zip(x.plane(n, c)).enumerate() {
                let expected = g.data()[c] * xv + b.data()[c];
                assert!((yv - expected).abs() < 1e-5 * (1.0 + expected.abs()), "{i}");
            }
        }
    }
}

#[test]
fn batchnorm_rejects_single_element_statistics() {
    let x = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
    let one = Tensor::full(shape(1, 2, 1, 1), DType::F64, 1.0);
    let zero = Tensor::zeros(shape(1, 2, 1, 1), DType::F64);
    let stats = BnStats::identity(2, DType::F64).unwrap();
    assert!(matches!(
        ops::batchnorm(&x, &one, &zero, &stats, true),
        Err(TensorError::DegenerateStatistics { .. })
    ));
    assert!(ops::batchnorm(&x, &one, &zero, &stats, false).is_ok());
}

#[test]
fn concat_hand_cases() {
    let a = Tensor::from_vec([1, 2, 1, 1], vec![1.0, 2.0]).unwrap();
    let c = Tensor::from_vec([1, 1, 1, 1], vec![3.0]).unwrap();
    assert_eq!(concat_channel(&[&a]).unwrap(), a);
    assert_eq!(concat_channel(&[&a, &c]).unwrap().data(), &[1.0, 2.0, 3.0]);
    let bad = Tensor::zeros(shape(1, 1, 2, 1), DType::F64);
    assert!(concat_channel(&[&a, &bad]).is_err());
}

#[test]
fn broadcast_mul_hand_cases() {
    let mut r = rng(13);
    let x = randn(shape(2, 3, 4, 4), &mut r);
    let ones = Tensor::full(shape(2, 3, 1, 1), DType::F64, 1.0);
    assert_eq!(broadcast_mul(&x, &ones).unwrap(), x);
    let four = Tensor::full(shape(1, 1, 3, 3), DType::F64, 4.0);
    let half = Tensor::full(shape(1, 1, 1, 1), DType::F64, 0.5);
    let y = broadcast_mul(&four, &half).unwrap();
    assert!(y.data().iter().all(|&v| v == 2.0));
    let bad = Tensor::zeros(shape(2, 2, 1, 1), DType::F64);
    assert!(broadcast_mul(&x, &bad).is_err());
}

#[test]
fn broadcast_mul_matches_loop_oracle() {
    let mut r = rng(14);
    let x = randn(shape(2, 3, 4, 5), &mut r);
    let full = randn(shape(2, 3, 4, 5), &mut r);
    let chan = randn(shape(2, 3, 1, 1), &mut r);
    let spat = randn(shape(2, 1, 4, 5), &mut r);
    let yf = broadcast_mul(&x, &full).unwrap();
    let yc = broadcast_mul(&x, &chan).unwrap();
    let ys = broadcast_mul(&x, &spat).unwrap();
    for n in 0..2 {
        for c in 0..3 {
            for y in 0..4 {
                for xx in 0..5 {
                    let v = x.at(n, c, y, xx);
                    assert_eq!(yf.at(n, c, y, xx), v * full.at(n, c, y, xx));
                    assert_eq!(yc.at(n, c, y, xx), v * chan.at(n, c, 0, 0));
                    assert_eq!(ys.at(n, c, y, xx), v * spat.at(n, 0, y, xx));
                }
            }
        }
    }
}

#[test]
fn upsample_two_by_two_to_four_by_four() {
    let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let y = bilinear_upsample(&x, 4, 4).unwrap();
    // Source coordinate (p + 0.5) / 2 - 0.5 clamped to [0, 1]; value is
    // 2·row + col at that coordinate.
    let coord = |p: usize| ((p as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
    for oy in 0..4 {
        for ox in 0..4 {
            let (ry, rx) = (coord(oy), coord(ox));
            let expected = (1.0 - ry) * (1.0 - rx) * 0.0
                + (1.0 - ry) * rx * 1.0
                + ry * (1.0 - rx) * 2.0
                + ry * rx * 3.0;
            assert!((y.at(0, 0, oy, ox) - expected).abs() < 1e-15, "({oy},{ox})");
        }
    }
    assert_eq!(y.at(0, 0, 0, 0), 0.0);
    assert_eq!(y.at(0, 0, 1, 1), 0.75);
    assert_eq!(y.at(0, 0, 3, 3), 3.0);
}

#[test]
fn upsample_by_one_is_a_copy() {
    let mut r = rng(15);
    let x = randn(shape(2, 3, 5, 7), &mut r);
    assert_eq!(bilinear_upsample(&x, 5, 7).unwrap(), x);
}

#[test]
fn grid_sample_corner_mean() {
    let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let pos = Tensor::from_vec([1, 2, 1, 1], vec![0.5, 0.5]).unwrap();
    assert_eq!(grid_sample_bilinear(&x, &pos).unwrap().data(), &[1.5]);
}

#[test]
fn grid_sample_clamps_out_of_range_positions() {
    let x = Tensor::from_vec([1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let pos = Tensor::from_vec([1, 2, 1, 2], vec![-4.0, 9.0, -1.0, 7.0]).unwrap();
    assert_eq!(grid_sample_bilinear(&x, &pos).unwrap().data(), &[0.0, 3.0]);
}

fn shift_pattern() -> Tensor {
    Tensor::from_fn(shape(1, 2, 6, 5), DType::F64, |_, c, y, x| {
        ((c + 1) * (y * y + 3 * x)) as f64
    })
}

#[test]
fn uniform_row_offset_of_one_stride_shifts_by_one_source_row() {
    let f = shift_pattern();
    let s = 2;
    let (oh, ow) = (12, 10);
    let zero = Tensor::zeros(shape(1, 2, oh, ow), DType::F64);
    let shift = Tensor::from_fn(shape(1, 2, oh, ow), DType::F64, |_, c, _, _| {
        if c == 0 {
            s as f64
        } else {
            0.0
        }
    });
    let base = aligned_upsample(&f, &zero, s).unwrap();
    let moved = aligned_upsample(&f, &shift, s).unwrap();
    // Interior rows: output row p with offset s samples what row p + s
    // samples without offset.
    for c in 0..2 {
        for oy in 1..oh - s - 1 {
            for ox in 0..ow {
                assert_eq!(moved.at(0, c, oy, ox), base.at(0, c, oy + s, ox));
            }
        }
    }
    // Direct sampling oracle.
    for c in 0..2 {
        for oy in 0..oh {
            for ox in 0..ow {
                let y = ((oy as f64 + s as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 5.0);
                let x = ((ox as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 4.0);
                let (y0, x0) = (y.floor() as usize, x.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(5), (x0 + 1).min(4));
                let (fy, fx) = (y - y0 as f64, x - x0 as f64);
                let top = f.at(0, c, y0, x0) + fx * (f.at(0, c, y0, x1) - f.at(0, c, y0, x0));
                let bot = f.at(0, c, y1, x0) + fx * (f.at(0, c, y1, x1) - f.at(0, c, y1, x0));
                let expected = top + fy * (bot - top);
                assert!((moved.at(0, c, oy, ox) - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn aligned_upsample_requires_integer_ratio() {
    let f = Tensor::zeros(shape(1, 1, 4, 4), DType::F64);
    let off = Tensor::zeros(shape(1, 2, 7, 8), DType::F64);
    assert!(aligned_upsample(&f, &off, 2).is_err());
}

#[test]
fn losses_reference_values() {
    let s = Tensor::zeros(shape(1, 4, 1, 1), DType::F64);
    let l = Tensor::from_vec([1, 4, 1, 1], vec![0.0, 1.0, 1.0, 0.0]).unwrap();
    assert!((ops::bce_with_logits(&s, &l).unwrap() - 2f64.ln()).abs() < 1e-15);
    let logits = Tensor::from_fn(shape(1, 3, 2, 2), DType::F64, |_, c, y, x| {
        if c == (y * 2 + x) % 3 {
            40.0
        } else {
            0.0
        }
    });
    let ce = ops::balanced_cross_entropy(&logits, &[0, 1, 2, 0], 255).unwrap();
    assert!(ce.loss < 1e-6);
    assert_eq!(ce.class_counts, vec![2, 1, 1]);
}

#[test]
fn local_filter_matches_loop_oracle() {
    let mut r = rng(16);
    let taps: Vec<(isize, isize)> = vec![(0, 0), (-2, 1), (3, -1)];
    let x = randn(shape(2, 2, 5, 4), &mut r);
    let w = randn(shape(2, 3, 5, 4), &mut r);
    let y = ops::local_filter(&x, &w, &taps).unwrap();
    for n in 0..2 {
        for c in 0..2 {
            for py in 0..5 {
                for px in 0..4 {
                    let mut acc = 0.0;
                    for (k, &(dy, dx)) in taps.iter().enumerate() {
                        let qy = (py as isize + dy).clamp(0, 4) as usize;
                        let qx = (px as isize + dx).clamp(0, 3) as usize;
                        acc += w.at(n, k, py, px) * x.at(n, c, qy, qx);
                    }
                    assert_eq!(y.at(n, c, py, px), acc);
                }
            }
        }
    }
}
