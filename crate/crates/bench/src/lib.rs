//! Shared setup for the benchmarks: the bundled corpus and small models.

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kgqg_core::autodiff::ParamStore;
use kgqg_core::batch::{GraphVariant, PreparedExample};
use kgqg_core::dataset::{build_vocab, load_corpus, QGExample, Split};
use kgqg_core::model::{Graph2Seq, ModelConfig};

pub fn corpus() -> Vec<QGExample> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/mini/train.jsonl");
    load_corpus(path, Split::Train).expect("bundled corpus")
}

/// An untrained model of the given width over the bundled corpus.
pub fn model(variant: GraphVariant, hidden: usize) -> (Graph2Seq, ParamStore<f32>, Vec<PreparedExample>) {
    let corpus = corpus();
    let vocab = Arc::new(build_vocab(&corpus, 1).expect("non-empty corpus"));
    let config = ModelConfig {
        variant,
        hidden,
        word_dim: hidden,
        ..ModelConfig::default()
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let model = Graph2Seq::new(&mut store, config, vocab, None, None, &mut rng).expect("valid config");
    let data = corpus
        .into_iter()
        .map(|e| PreparedExample::new(e, variant, true))
        .collect();
    (model, store, data)
}
