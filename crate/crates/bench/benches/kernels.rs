use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use vqabq_core::attention::random_coattention_params;
use vqabq_core::encoder::encode_text;
use vqabq_core::synth::{random_vector, SyntheticEncoder};
use vqabq_core::{alternating_coattention, FeatureSet, Matrix};

fn features(dim: usize, len: usize, seed: u64) -> FeatureSet {
    FeatureSet::new(Matrix::from_col_major(dim, len, random_vector(dim * len, seed)).unwrap()).unwrap()
}

fn coattention(c: &mut Criterion) {
    let mut group = c.benchmark_group("coattention");
    for &(words, regions, dim) in &[(8, 49, 64), (16, 196, 128)] {
        let q = features(dim, words, 1);
        let v = features(dim, regions, 2);
        let params = random_coattention_params(dim, dim, 32, 3).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("q{words}_v{regions}_d{dim}")),
            &(),
            |bench, _| bench.iter(|| alternating_coattention(black_box(&q), black_box(&v), &params).unwrap()),
        );
    }
    group.finish();
}

fn gru_encode(c: &mut Criterion) {
    let mut group = c.benchmark_group("gru_encode");
    for dim in [16, 64] {
        let enc = SyntheticEncoder::new(dim, 5).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |bench, _| {
            bench.iter(|| encode_text(&enc.gru, &enc.table, black_box("is there a dog in the picture?")).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, coattention, gru_encode);
criterion_main!(benches);
