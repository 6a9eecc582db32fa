//! Finite-difference oracle shared by unit tests.

use crate::autodiff::{Graph, ParamStore, Var};

pub const FD_STEP: f64 = 1e-5;

/// Largest relative error between analytic and central-difference
/// gradients over (up to `per_param`) entries of every parameter.
pub fn max_grad_error<B>(store: &ParamStore<f64>, per_param: usize, build: B) -> f64
where
    B: Fn(&mut Graph<'_, f64>) -> Var,
{
    let analytic = {
        let mut g = Graph::new(store);
        let out = build(&mut g);
        g.backward(out)
    };
    let mut probe = store.clone();
    let mut worst = 0.0f64;
    for id in store.ids() {
        let n = store.get(id).len();
        let stride = (n / per_param.max(1)).max(1);
        for flat in (0..n).step_by(stride).take(per_param) {
            let (r, c) = (flat / store.get(id).ncols(), flat % store.get(id).ncols());
            let orig = store.get(id)[(r, c)];
            probe.get_mut(id)[(r, c)] = orig + FD_STEP;
            let up = eval(&probe, &build);
            probe.get_mut(id)[(r, c)] = orig - FD_STEP;
            let down = eval(&probe, &build);
            probe.get_mut(id)[(r, c)] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let exact = analytic.get(id).map_or(0.0, |g| g[(r, c)]);
            let err = (numeric - exact).abs() / numeric.abs().max(exact.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

fn eval<B>(store: &ParamStore<f64>, build: &B) -> f64
where
    B: Fn(&mut Graph<'_, f64>) -> Var,
{
    let mut g = Graph::inference(store);
    let out = build(&mut g);
    g.scalar(out)
}

/// Four one-triple examples, small enough to train in milliseconds.
pub fn toy_corpus() -> Vec<crate::dataset::QGExample> {
    [
        r#"{"triples": [["Mario", "sibling", "Luigi"]], "answers": ["Luigi"], "question": "who is mario 's sibling ?"}"#,
        r#"{"triples": [["Rome", "capital_of", "Italy"]], "answers": ["Rome"], "question": "what is the capital of italy ?"}"#,
        r#"{"triples": [["Paris", "capital_of", "France"]], "answers": ["Paris"], "question": "what is the capital of france ?"}"#,
        r#"{"triples": [["Luigi", "place_of_birth", "Rome"]], "answers": ["Rome"], "question": "where was luigi born ?"}"#,
    ]
    .iter()
    .enumerate()
    .map(|(i, l)| crate::dataset::parse_example(l, &format!("t-{i}")).unwrap())
    .collect()
}

/// A tiny model and trainer over [`toy_corpus`].
pub fn toy_trainer(
    stage: crate::trainer::Stage,
    seed: u64,
) -> (crate::trainer::Trainer<f32>, Vec<crate::batch::PreparedExample>) {
    use crate::batch::{GraphVariant, PreparedExample};
    use crate::model::{Graph2Seq, ModelConfig};
    use crate::training::Config;
    use rand::SeedableRng;

    let corpus = toy_corpus();
    let vocab = std::sync::Arc::new(crate::dataset::build_vocab(&corpus, 1).unwrap());
    let mut config = Config::default();
    config.model = ModelConfig {
        word_dim: 8,
        hidden: 12,
        markup_dim: 4,
        hops: 2,
        ..ModelConfig::default()
    };
    config.train.batch_size = 2;
    config.train.seed = seed;
    config.train.max_decode_len = 10;
    let mut store = ParamStore::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let model = Graph2Seq::new(&mut store, config.model.clone(), vocab, None, None, &mut rng).unwrap();
    let prepared = corpus
        .into_iter()
        .map(|e| PreparedExample::new(e, GraphVariant::Levi, true))
        .collect();
    (crate::trainer::Trainer::new(model, store, config, stage), prepared)
}
