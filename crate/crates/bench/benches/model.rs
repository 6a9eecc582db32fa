use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use kgqg_bench::model;
use kgqg_core::autodiff::Graph;
use kgqg_core::batch::GraphVariant;
use kgqg_core::graph::to_levi;
use kgqg_core::nn::Dropout;
use kgqg_core::trainer::{Stage, Trainer};
use kgqg_core::training::Config;

fn levi(c: &mut Criterion) {
    let corpus = kgqg_bench::corpus();
    c.bench_function("levi_transform_corpus", |b| {
        b.iter(|| corpus.iter().map(|e| to_levi(black_box(&e.graph)).node_count()).sum::<usize>())
    });
}

fn encode(c: &mut Criterion) {
    let mut group = c.benchmark_group("encode_batch32");
    for variant in [GraphVariant::Levi, GraphVariant::EdgeAware] {
        let (m, store, data) = model(variant, 128);
        let graphs: Vec<_> = data.iter().map(|p| &p.graph).collect();
        let batch = m.batch(&graphs);
        group.bench_function(BenchmarkId::from_parameter(format!("{variant:?}")), |b| {
            b.iter(|| {
                let mut g = Graph::inference(&store);
                m.encode(&mut g, black_box(&batch), &mut Dropout::Eval).unwrap().states.graph
            })
        });
    }
    group.finish();
}

fn decode(c: &mut Criterion) {
    let (m, store, data) = model(GraphVariant::Levi, 128);
    let mut group = c.benchmark_group("decode_one");
    for width in [1, 5] {
        group.bench_function(BenchmarkId::new("beam", width), |b| {
            b.iter(|| m.generate(&store, black_box(&data[0].graph), width, 20).unwrap().words.len())
        });
    }
    group.finish();
}

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step_batch30");
    group.sample_size(10);
    for stage in [Stage::Xent, Stage::Rl] {
        let (m, store, data) = model(GraphVariant::Levi, 128);
        let mut t = Trainer::new(m, store, Config::default(), stage);
        let batch: Vec<_> = data.iter().take(30).collect();
        group.bench_function(BenchmarkId::from_parameter(format!("{stage:?}")), |b| {
            b.iter(|| t.gradients(black_box(&batch)).unwrap().1.loss)
        });
    }
    group.finish();
}

criterion_group!(benches, levi, encode, decode, train_step);
criterion_main!(benches);
