use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wsfcn_tensor::ops::{aligned_upsample, conv2d, softmax_channel};
use wsfcn_tensor::{exec, Conv2dSpec, DType, Shape, Tensor};

fn bench_conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::randn(Shape::new(8, 32, 16, 16).unwrap(), DType::F32, 1.0, &mut rng);
    let w = Tensor::randn(Shape::new(32, 32, 3, 3).unwrap(), DType::F32, 0.1, &mut rng);
    let mut group = c.benchmark_group("conv2d_8x32x16x16_k3");
    for parallel in [false, true] {
        let label = if parallel { "rayon" } else { "sequential" };
        group.bench_function(BenchmarkId::from_parameter(label), |b| {
            exec::set_parallel(parallel);
            b.iter(|| conv2d(&x, &w, None, Conv2dSpec::same(3, 3)).unwrap())
        });
    }
    group.finish();
    exec::set_parallel(true);
}

fn bench_sampling(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = Tensor::randn(Shape::new(8, 32, 8, 8).unwrap(), DType::F32, 1.0, &mut rng);
    let off = Tensor::randn(Shape::new(8, 2, 16, 16).unwrap(), DType::F32, 1.0, &mut rng);
    let logits = Tensor::randn(Shape::new(8, 5, 16, 16).unwrap(), DType::F32, 2.0, &mut rng);
    let mut group = c.benchmark_group("sampling");
    for parallel in [false, true] {
        let label = if parallel { "rayon" } else { "sequential" };
        group.bench_function(BenchmarkId::new("aligned_upsample", label), |b| {
            exec::set_parallel(parallel);
            b.iter(|| aligned_upsample(&x, &off, 2).unwrap())
        });
    }
    group.bench_function("softmax_channel", |b| b.iter(|| softmax_channel(&logits)));
    group.finish();
    exec::set_parallel(true);
}

criterion_group!(benches, bench_conv, bench_sampling);
criterion_main!(benches);
