use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use enhance_bench::{low_light, schedule};
use enhance_core::metrics::{loe, LOE_SAMPLE_CAP};
use enhance_core::sampler::{enhance, enhance_any_size, sample_unconditional};
use enhance_core::{EnhanceConfig, GaussianPrior, GuidanceConfig, RandomSource, Shape};
use std::hint::black_box;

fn guided() -> EnhanceConfig {
    EnhanceConfig {
        guidance: GuidanceConfig {
            scale: 1e3,
            lambda_smooth: 0.0,
            ..GuidanceConfig::default()
        },
        patch_size: 64,
        patch_stride: 32,
        ..EnhanceConfig::default()
    }
}

fn bench_sampling(c: &mut Criterion) {
    let sched = schedule(20);
    let prior = GaussianPrior::constant(3, 0.5, 0.25).unwrap();
    c.bench_function("unconditional 3x64x64", |b| {
        b.iter(|| sample_unconditional(&prior, &sched, Shape::new(3, 64, 64), &mut RandomSource::new(0)).unwrap())
    });
    let y = low_light(3, 64, 64);
    c.bench_function("guided 3x64x64", |b| {
        b.iter(|| enhance(black_box(&y), &prior, &sched, &guided(), &mut RandomSource::new(0)).unwrap())
    });

    let mut group = c.benchmark_group("patched 3x160x160");
    group.sample_size(10);
    let big = low_light(3, 160, 160);
    for workers in [1, 4] {
        let cfg = EnhanceConfig { workers, ..guided() };
        group.bench_with_input(BenchmarkId::from_parameter(workers), &cfg, |b, cfg| {
            b.iter(|| enhance_any_size(&big, &prior, &sched, cfg, &mut RandomSource::new(0)).unwrap())
        });
    }
    group.finish();
}

fn bench_loe(c: &mut Criterion) {
    let a = low_light(3, 256, 256);
    let b2 = a.map(|v| (v * 2.5).min(1.0));
    c.bench_function("loe 256x256", |b| b.iter(|| loe(black_box(&a), black_box(&b2), LOE_SAMPLE_CAP).unwrap()));
}

criterion_group!(benches, bench_sampling, bench_loe);
criterion_main!(benches);
