use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lat_core::data::{gen_sequence_task, Batch};
use lat_core::eval::evaluate;
use lat_core::training::{compute_gradients, StepPlan, SubModel};
use lat_core::{Execution, LengthConfig, Model, ModelConfig};
use std::hint::black_box;

fn config() -> ModelConfig {
    ModelConfig {
        num_layers: 2,
        hidden: 32,
        num_heads: 4,
        ffn_dim: 64,
        vocab_size: 32,
        max_len: 32,
        ..ModelConfig::default()
    }
}

fn bench_gradients(c: &mut Criterion) {
    let model = Model::init(config(), 0).unwrap();
    let ds = gen_sequence_task(0, 32, (16, 32), 32).unwrap();
    let batch = Batch::from_examples(&ds.examples);
    let plan = StepPlan {
        full: LengthConfig::full(batch.max_len, 2),
        sandwiches: vec![SubModel {
            lengths: LengthConfig::new(vec![24, 16]).unwrap(),
            layerdrop: vec![false, false],
        }],
        smallest: Some(SubModel {
            lengths: LengthConfig::new(vec![16, 8]).unwrap(),
            layerdrop: vec![false, false],
        }),
    };

    let mut group = c.benchmark_group("compute_gradients");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| {
                b.iter(|| compute_gradients(black_box(&model), &batch, &plan, 0, exec).unwrap())
            },
        );
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let model = Model::init(config(), 0).unwrap();
    let ds = gen_sequence_task(1, 256, (8, 32), 32).unwrap();
    let lengths = LengthConfig::new(vec![20, 12]).unwrap();

    let mut group = c.benchmark_group("evaluate");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| {
                b.iter(|| evaluate(black_box(&model), &ds.examples, &lengths, exec).unwrap())
            },
        );
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_gradients, bench_evaluate
}
criterion_main!(benches);
