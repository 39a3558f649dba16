use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use isectreg_core::{
    fidelity, fit_cart, generate, quantize, split, train, AttributeMatrix, ProbVector, QuantSpec, SplitFractions,
    SynthSpec, TrainConfig, TreeSample, TreeSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn bench_quantize(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..3.0)).collect();
    let mut group = c.benchmark_group("quantize");
    for bits in [1, 2, 4, 8] {
        let spec = QuantSpec::new(bits).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(bits), &spec, |b, &spec| {
            b.iter(|| quantize(black_box(&x), spec).unwrap())
        });
    }
    group.finish();
}

fn tree_samples(m: usize, n: usize, k: usize, seed: u64) -> Vec<TreeSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..m)
        .map(|_| {
            let features = (0..n).map(|_| rng.random_range(0..4)).collect();
            let mut p: Vec<f64> = (0..k).map(|_| rng.random_range(0.01..1.0)).collect();
            let total: f64 = p.iter().sum();
            p.iter_mut().for_each(|v| *v /= total);
            TreeSample::new(features, ProbVector::new(p).unwrap())
        })
        .collect()
}

fn bench_fit_cart(c: &mut Criterion) {
    let mut group = c.benchmark_group("fit_cart");
    group.sample_size(20);
    for m in [500, 2000] {
        let samples = tree_samples(m, 32, 8, 2);
        let spec = TreeSpec::new(6, 2).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(m), &samples, |b, samples| {
            b.iter(|| fit_cart(black_box(samples), spec).unwrap())
        });
    }
    group.finish();
}

fn bench_fidelity(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut matrix = |cols: usize| {
        let rows: Vec<Vec<u8>> = (0..2000)
            .map(|_| (0..cols).map(|_| u8::from(rng.random_bool(0.25))).collect())
            .collect();
        AttributeMatrix::from_rows(&rows).unwrap()
    };
    let truth = matrix(16);
    let repr = matrix(256);
    c.bench_function("fidelity/2000x16_vs_256", |b| {
        b.iter(|| fidelity(black_box(&truth), black_box(&repr)).unwrap())
    });
}

fn bench_train_epoch(c: &mut Criterion) {
    let spec = SynthSpec {
        m: 500,
        ..SynthSpec::default()
    };
    let data = split(&generate(&spec).unwrap(), SplitFractions::default(), 4).unwrap();
    let config = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("one_epoch_m500", |b| b.iter(|| train(black_box(&data), &config).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_quantize, bench_fit_cart, bench_fidelity, bench_train_epoch);
criterion_main!(benches);
