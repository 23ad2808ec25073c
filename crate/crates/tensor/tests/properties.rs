mod common;

use common::*;
use proptest::prelude::*;
use wsfcn_tensor::ops::{
    aligned_upsample, bilinear_upsample, conv2d, grid_sample_bilinear, softmax_channel,
};
use wsfcn_tensor::{wsft, Conv2dSpec, DType, Shape, Tensor};

fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
    (1usize..=2, 1usize..=4, 1usize..=6, 1usize..=6)
}

fn tensor_with(dtype: DType) -> impl Strategy<Value = Tensor> {
    dims().prop_flat_map(move |(n, c, h, w)| {
        prop::collection::vec(-1e3f64..1e3, n * c * h * w).prop_map(move |data| {
            Tensor::new(Shape::new(n, c, h, w).unwrap(), dtype, data).unwrap()
        })
    })
}

fn tensor() -> impl Strategy<Value = Tensor> {
    tensor_with(DType::F64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_strict_simplex(t in tensor()) {
        let small = t.map(|v| v / 100.0);
        let y = softmax_channel(&small);
        let s = y.shape();
        for n in 0..s.n() {
            for py in 0..s.h() {
                for px in 0..s.w() {
                    let mut sum = 0.0;
                    for c in 0..s.c() {
                        let v = y.at(n, c, py, px);
                        prop_assert!(v > 0.0 && v <= 1.0);
                        sum += v;
                    }
                    prop_assert!((sum - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn resamplers_preserve_constants(
        (n, c, h, w) in dims(),
        v in -50.0f64..50.0,
        up in 1usize..=3,
        offsets in prop::collection::vec(-20.0f64..20.0, 1..64),
    ) {
        let x = Tensor::full(Shape::new(n, c, h, w).unwrap(), DType::F64, v);
        let y = bilinear_upsample(&x, h * up, w * up + 1).unwrap();
        prop_assert!(y.data().iter().all(|&o| o == v));
        let off = Tensor::from_fn(Shape::new(n, 2, h * up, w * up).unwrap(), DType::F64, |s, ch, oy, ox| {
            offsets[(s + ch + oy * 3 + ox * 7) % offsets.len()]
        });
        let z = aligned_upsample(&x, &off, up).unwrap();
        prop_assert!(z.data().iter().all(|&o| o == v));
        let g = grid_sample_bilinear(&x, &off).unwrap();
        prop_assert!(g.data().iter().all(|&o| o == v));
    }

    #[test]
    fn integer_grid_sampling_is_identity(t in tensor()) {
        let s = t.shape();
        let pos = Tensor::from_fn(Shape::new(s.n(), 2, s.h(), s.w()).unwrap(), DType::F64, |_, c, y, x| {
            if c == 0 { y as f64 } else { x as f64 }
        });
        prop_assert_eq!(grid_sample_bilinear(&t, &pos).unwrap(), t);
    }

    #[test]
    fn zero_offset_upsample_is_plain_upsample(t in tensor(), stride in 1usize..=4) {
        let s = t.shape();
        let (oh, ow) = (s.h() * stride, s.w() * stride);
        let zero = Tensor::zeros(Shape::new(s.n(), 2, oh, ow).unwrap(), DType::F64);
        let a = aligned_upsample(&t, &zero, stride).unwrap();
        let b = bilinear_upsample(&t, oh, ow).unwrap();
        prop_assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn wsft_round_trip_is_byte_exact(t in prop_oneof![tensor_with(DType::F64), tensor_with(DType::F32)]) {
        let bytes = wsft::encode(&t);
        let back = wsft::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(wsft::encode(&back), bytes);
    }

    #[test]
    fn wsft_rejects_truncation(t in tensor(), cut in 1usize..16) {
        let bytes = wsft::encode(&t);
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(wsft::decode(&bytes[..keep]).is_err());
    }

    #[test]
    fn conv_is_deterministic(seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = randn(shape(2, 3, 7, 6), &mut r);
        let w = randn(shape(4, 3, 3, 3), &mut r);
        let a = conv2d(&x, &w, None, Conv2dSpec::same(3, 3)).unwrap();
        let b = conv2d(&x, &w, None, Conv2dSpec::same(3, 3)).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn wsft_header_layout() {
    let t = Tensor::from_vec([1, 2, 1, 1], vec![1.5, -2.0]).unwrap();
    let bytes = wsft::encode(&t);
    assert_eq!(&bytes[..4], &[0x57, 0x53, 0x46, 0x54]);
    assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    assert_eq!(bytes[8], 1);
    assert_eq!(bytes[9], 4);
    assert_eq!(&bytes[14..18], &2u32.to_le_bytes());
    assert_eq!(&bytes[26..34], &1.5f64.to_le_bytes());
    assert_eq!(bytes.len(), 26 + 16);
}

#[test]
fn wsft_file_round_trip() {
    let dir = std::env::temp_dir().join(format!("wsft-test-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("t.wsft");
    let t = Tensor::randn(shape(2, 3, 4, 5), DType::F32, 1.0, &mut rng(3));
    wsft::save(&path, &t).unwrap();
    assert_eq!(wsft::load(&path).unwrap(), t);
    std::fs::remove_dir_all(&dir).unwrap();
}
