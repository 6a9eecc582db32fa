use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kgqg_core::analysis::analyze;
use kgqg_core::metrics::{bleu4, meteor_simplified, rouge_l, BleuMode, MetricReport};

fn sentences(n: usize, seed: u64) -> Vec<Vec<String>> {
    let words = ["what", "is", "the", "capital", "of", "who", "directed", "where", "was", "born", "?"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let len = rng.random_range(4..16);
            (0..len).map(|_| words[rng.random_range(0..words.len())].to_string()).collect()
        })
        .collect()
}

fn metrics(c: &mut Criterion) {
    let cands = sentences(1000, 1);
    let refs = sentences(1000, 2);
    c.bench_function("corpus_bleu4_1000", |b| {
        b.iter(|| bleu4(black_box(&cands), black_box(&refs), BleuMode::Corpus))
    });
    c.bench_function("rouge_l_1000", |b| {
        b.iter(|| cands.iter().zip(&refs).map(|(c, r)| rouge_l(c, r)).sum::<f64>())
    });
    c.bench_function("meteor_1000", |b| {
        b.iter(|| cands.iter().zip(&refs).map(|(c, r)| meteor_simplified(c, r)).sum::<f64>())
    });
    c.bench_function("metric_report_1000", |b| {
        b.iter(|| MetricReport::compute(black_box(&cands), black_box(&refs)).bleu4)
    });
    c.bench_function("prefix_analysis_1000", |b| b.iter(|| analyze(black_box(&cands), None, 5).prefixes.len()));
}

criterion_group!(benches, metrics);
criterion_main!(benches);
