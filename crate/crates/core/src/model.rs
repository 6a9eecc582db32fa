//! The full graph-to-sequence model: node initialization, graph encoder
//! and copy decoder, plus batched unrolling and single-example search.

use std::rc::Rc;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Scalar, Var};
use crate::batch::{EncoderGraph, GraphBatch, GraphVariant};
use crate::dataset::{Vocabulary, EOS, SOS};
use crate::decoder::{Decoder, DecoderOptions, DecoderState, ExtendedVocabulary, Memory};
use crate::embed_init::{
    InitOptions, KgEmbeddingTable, NodeInit, NodeInitializer, PretrainedVectors, WordEmbeddings,
};
use crate::encoder::{BiGgnn, EncoderDirection, NodeStates};
use crate::error::{Error, Result};
use crate::nn::Dropout;
use crate::search::{argmax, beam_decode, greedy_decode, Hypothesis, StepModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: GraphVariant,
    pub direction: EncoderDirection,
    pub node_init: NodeInit,
    pub use_copy: bool,
    pub use_answer_markup: bool,
    pub word_dim: usize,
    pub hidden: usize,
    pub markup_dim: usize,
    pub hops: usize,
    pub input_feeding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: GraphVariant::Levi,
            direction: EncoderDirection::Bidirectional,
            node_init: NodeInit::Word,
            use_copy: true,
            use_answer_markup: true,
            word_dim: 300,
            hidden: 300,
            markup_dim: 32,
            hops: 4,
            input_feeding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.hidden < 2 || self.hidden % 2 != 0 {
            return bad("hidden size must be even and at least 2");
        }
        if self.word_dim == 0 {
            return bad("word_dim must be positive");
        }
        if self.hops == 0 {
            return bad("hops must be at least 1");
        }
        if self.use_answer_markup && self.markup_dim == 0 {
            return bad("markup_dim must be positive when the answer markup is on");
        }
        Ok(())
    }
}

/// Output of the encoder plus everything the decoder starts from.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub states: NodeStates,
    pub memory: Memory,
    pub start: DecoderState,
}

/// How decoder inputs are chosen while unrolling.
pub enum Feed<'a> {
    /// Argmax of the previous step.
    Greedy,
    /// Draw from the previous step's distribution.
    Sample(&'a mut ChaCha8Rng),
    /// Gold previous index with probability `prob`, otherwise the argmax of
    /// the previous step, decided per row and step.
    Teacher {
        targets: &'a [Vec<usize>],
        prob: f64,
        rng: &'a mut ChaCha8Rng,
    },
}

/// Per-step distributions and the index sequences read off them.
#[derive(Debug, Clone)]
pub struct Unrolled {
    pub dists: Vec<Var>,
    /// Emitted indices per row, including EOS when reached.
    pub sequences: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct Graph2Seq {
    pub config: ModelConfig,
    pub vocab: Arc<Vocabulary>,
    pub words: WordEmbeddings,
    pub init: NodeInitializer,
    pub encoder: BiGgnn,
    pub decoder: Decoder,
    pub kg: Option<Arc<KgEmbeddingTable>>,
}

impl Graph2Seq {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        config: ModelConfig,
        vocab: Arc<Vocabulary>,
        pretrained: Option<&PretrainedVectors>,
        kg: Option<KgEmbeddingTable>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        if config.node_init == NodeInit::KgTable && kg.is_none() {
            return Err(Error::Config("kg-table node init needs an embedding table".into()));
        }
        let words = WordEmbeddings::new(store, &vocab, config.word_dim, pretrained, rng)?;
        let init = NodeInitializer::new(
            store,
            InitOptions {
                mode: config.node_init,
                word_dim: config.word_dim,
                hidden: config.hidden,
                markup_dim: config.use_answer_markup.then_some(config.markup_dim),
                kg_dim: kg.as_ref().map_or(0, |t| t.dim),
                edge_features: config.variant == GraphVariant::EdgeAware,
            },
            rng,
        );
        let encoder = BiGgnn::new(
            store,
            config.hidden,
            config.hops,
            config.direction,
            config.variant == GraphVariant::EdgeAware,
            rng,
        );
        let decoder = Decoder::new(
            store,
            DecoderOptions {
                hidden: config.hidden,
                word_dim: config.word_dim,
                vocab_size: vocab.len(),
                copy: config.use_copy,
                input_feeding: config.input_feeding,
            },
            rng,
        );
        Ok(Graph2Seq {
            config,
            vocab,
            words,
            init,
            encoder,
            decoder,
            kg: kg.map(Arc::new),
        })
    }

    pub fn encoder_graph(&self, g: &crate::graph::KGSubgraph) -> EncoderGraph {
        EncoderGraph::new(g, self.config.variant)
    }

    pub fn batch(&self, graphs: &[&EncoderGraph]) -> GraphBatch {
        let owned: Vec<EncoderGraph> = graphs.iter().map(|g| (*g).clone()).collect();
        GraphBatch::new(&owned, &self.vocab, self.config.use_copy)
    }

    pub fn encode<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        batch: &GraphBatch,
        dropout: &mut Dropout<'_>,
    ) -> Result<Encoded> {
        let init = self.init.init(g, &self.words, batch, self.kg.as_deref(), dropout)?;
        let states = self.encoder.encode(g, &init, batch, dropout)?;
        let memory = self.decoder.memory(
            g,
            states.nodes(),
            Rc::clone(&batch.segs),
            Rc::clone(&batch.copy_mask),
            Rc::clone(&batch.copy_targets),
            batch.ext.len(),
        )?;
        let start = self.decoder.initial_state(g, states.graph);
        Ok(Encoded {
            states,
            memory,
            start,
        })
    }

    /// Runs the decoder over a batch for at most `max_len` steps (teacher
    /// forcing: exactly the longest target).
    pub fn unroll<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        enc: &Encoded,
        ext: &ExtendedVocabulary,
        max_len: usize,
        mut feed: Feed<'_>,
        dropout: &mut Dropout<'_>,
    ) -> Unrolled {
        let rows = enc.memory.segs.count();
        let steps = match &feed {
            Feed::Teacher { targets, .. } => targets.iter().map(Vec::len).max().unwrap_or(0),
            _ => max_len,
        };
        let input_mask = dropout
            .embed_mask::<F>((rows, self.config.word_dim))
            .map(|m| g.constant(m));
        let state_mask = dropout
            .rnn_mask::<F>((rows, self.config.hidden))
            .map(|m| g.constant(m));

        let mut state = enc.start;
        let mut prev = vec![SOS; rows];
        let mut dists = Vec::with_capacity(steps);
        let mut sequences: Vec<Vec<usize>> = vec![Vec::new(); rows];
        let mut done = vec![false; rows];
        for t in 0..steps {
            let mut x = Decoder::embed_output(g, &self.words, ext, &prev);
            if let Some(m) = input_mask {
                x = g.mul(x, m);
            }
            let (out, next) = self.decoder.step(g, state, x, &enc.memory, state_mask);
            state = next;
            dists.push(out.dist);
            let d = g.value(out.dist);
            for r in 0..rows {
                let row: Vec<f64> = d.row(r).iter().map(|v| v.as_f64()).collect();
                let chosen = match &mut feed {
                    Feed::Greedy => argmax(&row),
                    Feed::Sample(rng) => sample(&row, rng),
                    Feed::Teacher { targets, prob, rng } => {
                        let forced = rng.random_bool(prob.clamp(0.0, 1.0));
                        match targets[r].get(t) {
                            Some(&gold) if forced => gold,
                            _ => argmax(&row),
                        }
                    }
                };
                if !done[r] {
                    sequences[r].push(chosen);
                    done[r] = chosen == EOS;
                }
                prev[r] = chosen;
            }
            if !matches!(feed, Feed::Teacher { .. }) && done.iter().all(|&d| d) {
                break;
            }
        }
        Unrolled { dists, sequences }
    }

    /// Greedy decoding of several examples at once; returns index
    /// sequences without EOS.
    pub fn greedy_batch<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        graphs: &[&EncoderGraph],
        max_len: usize,
    ) -> Result<(Vec<Vec<usize>>, ExtendedVocabulary)> {
        let batch = self.batch(graphs);
        let mut g = Graph::inference(store);
        let enc = self.encode(&mut g, &batch, &mut Dropout::Eval)?;
        let out = self.unroll(&mut g, &enc, &batch.ext, max_len, Feed::Greedy, &mut Dropout::Eval);
        let seqs = out
            .sequences
            .into_iter()
            .map(|mut s| {
                if s.last() == Some(&EOS) {
                    s.pop();
                }
                s
            })
            .collect();
        Ok((seqs, batch.ext))
    }

    /// Decodes one graph with beam search (`width == 1` is greedy).
    pub fn generate<F: Scalar>(
        &self,
        store: &ParamStore<F>,
        graph: &EncoderGraph,
        width: usize,
        max_len: usize,
    ) -> Result<Generated> {
        let batch = self.batch(&[graph]);
        let mut g = Graph::inference(store);
        let enc = self.encode(&mut g, &batch, &mut Dropout::Eval)?;
        let mut stepper = Stepper::new(self, &mut g, &enc, &batch.ext);
        let hyp = if width == 1 {
            greedy_decode(&mut stepper, max_len)
        } else {
            beam_decode(&mut stepper, width, max_len)
        };
        Ok(Generated {
            words: batch.ext.to_words(&hyp.tokens),
            copies: hyp.tokens.iter().filter(|&&i| batch.ext.is_extended(i)).count(),
            hypothesis: hyp,
        })
    }
}

/// A decoded question.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub words: Vec<String>,
    pub hypothesis: Hypothesis,
    /// Emitted multi-word or out-of-vocabulary names.
    pub copies: usize,
}

/// Draws an index from a probability row.
pub fn sample(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            if u < p {
                return i;
            }
            u -= p;
        }
    }
    last_positive
}

/// Decoder state of one hypothesis, detached from the tape.
#[derive(Debug, Clone)]
pub struct HypState<F> {
    h: Array1<F>,
    c: Array1<F>,
    context: Array1<F>,
}

/// [`StepModel`] over a single encoded example.
pub struct Stepper<'m, 'g, 'p, F: Scalar> {
    model: &'m Graph2Seq,
    g: &'g mut Graph<'p, F>,
    start: HypState<F>,
    memory: Memory,
    ext: &'m ExtendedVocabulary,
    replicated: Option<(usize, Memory)>,
}

impl<'m, 'g, 'p, F: Scalar> Stepper<'m, 'g, 'p, F> {
    pub fn new(model: &'m Graph2Seq, g: &'g mut Graph<'p, F>, enc: &Encoded, ext: &'m ExtendedVocabulary) -> Self {
        let row = |g: &Graph<'p, F>, v: Var| g.value(v).row(0).to_owned();
        let start = HypState {
            h: row(g, enc.start.h),
            c: row(g, enc.start.c),
            context: row(g, enc.start.context),
        };
        Stepper {
            model,
            g,
            start,
            memory: enc.memory.clone(),
            ext,
            replicated: None,
        }
    }

    fn memory_for(&mut self, k: usize) -> Memory {
        if k == 1 {
            return self.memory.clone();
        }
        match &self.replicated {
            Some((n, m)) if *n == k => m.clone(),
            _ => {
                let m = self.memory.select(self.g, &vec![0; k]);
                self.replicated = Some((k, m.clone()));
                m
            }
        }
    }
}

fn stack<F: Scalar>(rows: impl Iterator<Item = Array1<F>>, cols: usize) -> Array2<F> {
    let rows: Vec<Array1<F>> = rows.collect();
    let mut out = Array2::zeros((rows.len(), cols));
    for (i, r) in rows.iter().enumerate() {
        out.row_mut(i).assign(r);
    }
    out
}

impl<F: Scalar> StepModel for Stepper<'_, '_, '_, F> {
    type State = HypState<F>;

    fn start(&mut self) -> HypState<F> {
        self.start.clone()
    }

    fn step(&mut self, states: &[HypState<F>], last: &[usize]) -> (Vec<HypState<F>>, Vec<Vec<f64>>) {
        let d = self.model.config.hidden;
        let k = states.len();
        let mem = self.memory_for(k);
        let g = &mut *self.g;
        let state = DecoderState {
            h: g.constant(stack(states.iter().map(|s| s.h.clone()), d)),
            c: g.constant(stack(states.iter().map(|s| s.c.clone()), d)),
            context: g.constant(stack(states.iter().map(|s| s.context.clone()), d)),
        };
        let x = Decoder::embed_output(g, &self.model.words, self.ext, last);
        let (out, next) = self.model.decoder.step(g, state, x, &mem, None);
        let dist = g.value(out.dist);
        let logp = dist
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|&p| p.as_f64().ln()).collect())
            .collect();
        let new_states = (0..k)
            .map(|i| HypState {
                h: g.value(next.h).row(i).to_owned(),
                c: g.value(next.c).row(i).to_owned(),
                context: g.value(next.context).row(i).to_owned(),
            })
            .collect();
        (new_states, logp)
    }
}
