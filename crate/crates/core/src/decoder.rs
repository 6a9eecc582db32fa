//! Attention LSTM decoder with node-level copying.
//!
//! At each step the decoder attends over the final node embeddings. The
//! output distribution over the extended vocabulary mixes a softmax over
//! the base vocabulary with the attention weights restricted to entity
//! nodes: `p_gen · P_vocab + (1 − p_gen) · P_copy`. A copy emits the whole
//! node name in one step.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamStore, Scalar, Segments, Var};
use crate::dataset::{Vocabulary, EOS, PAD, SOS};
use crate::embed_init::WordEmbeddings;
use crate::error::{Error, Result};
use crate::nn::{Linear, LstmCell};

/// Base vocabulary plus the entity names of one batch.
///
/// A name that is a single in-vocabulary token uses that token's index, so
/// generating and copying it add up. Every other name gets an index at or
/// above `base.len()`; equal names share one index.
#[derive(Debug, Clone)]
pub struct ExtendedVocabulary {
    base: Arc<Vocabulary>,
    extra: Vec<Vec<String>>,
    node_index: Vec<Vec<Option<usize>>>,
}

impl ExtendedVocabulary {
    /// `names[ex][node]` is the tokenized name of a copyable node.
    pub fn new(base: Arc<Vocabulary>, names: &[Vec<Option<Vec<String>>>]) -> Self {
        let mut extra: Vec<Vec<String>> = Vec::new();
        let mut lookup: HashMap<Vec<String>, usize> = HashMap::new();
        let node_index = names
            .iter()
            .map(|nodes| {
                nodes
                    .iter()
                    .map(|name| {
                        let name = name.as_ref()?;
                        if name.len() == 1 && base.contains(&name[0]) {
                            return Some(base.lookup(&name[0]));
                        }
                        let next = base.len() + extra.len();
                        Some(*lookup.entry(name.clone()).or_insert_with(|| {
                            extra.push(name.clone());
                            next
                        }))
                    })
                    .collect()
            })
            .collect();
        ExtendedVocabulary {
            base,
            extra,
            node_index,
        }
    }

    pub fn base(&self) -> &Arc<Vocabulary> {
        &self.base
    }

    pub fn base_len(&self) -> usize {
        self.base.len()
    }

    pub fn len(&self) -> usize {
        self.base.len() + self.extra.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn example_count(&self) -> usize {
        self.node_index.len()
    }

    pub fn node_index(&self, ex: usize, node: usize) -> Option<usize> {
        self.node_index[ex].get(node).copied().flatten()
    }

    pub fn is_extended(&self, index: usize) -> bool {
        index >= self.base.len()
    }

    /// Words produced by emitting `index`.
    pub fn surface(&self, index: usize) -> Vec<String> {
        if self.is_extended(index) {
            self.extra[index - self.base.len()].clone()
        } else if matches!(index, PAD | SOS | EOS) {
            Vec::new()
        } else {
            vec![self.base.token(index).to_string()]
        }
    }

    /// Base-vocabulary rows whose mean is the input embedding of `index`.
    pub fn input_ids(&self, index: usize) -> Vec<usize> {
        if self.is_extended(index) {
            self.extra[index - self.base.len()]
                .iter()
                .map(|t| self.base.lookup(t))
                .collect()
        } else {
            vec![index]
        }
    }

    /// Entries example `ex` can put mass on: the base vocabulary and its
    /// own names.
    pub fn valid_mask(&self, ex: usize) -> Vec<bool> {
        let mut mask = vec![false; self.len()];
        mask[..self.base.len()].fill(true);
        for idx in self.node_index[ex].iter().flatten() {
            mask[*idx] = true;
        }
        mask
    }

    /// Surface words of an index sequence, stopping at EOS.
    pub fn to_words(&self, indices: &[usize]) -> Vec<String> {
        indices
            .iter()
            .take_while(|&&i| i != EOS)
            .flat_map(|&i| self.surface(i))
            .collect()
    }

    /// Restriction to the listed examples, in order.
    pub fn select(&self, examples: &[usize]) -> Self {
        ExtendedVocabulary {
            base: Arc::clone(&self.base),
            extra: self.extra.clone(),
            node_index: examples.iter().map(|&e| self.node_index[e].clone()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderOptions {
    pub hidden: usize,
    pub word_dim: usize,
    pub vocab_size: usize,
    pub copy: bool,
    pub input_feeding: bool,
}

/// Attention memory for a batch of decoder rows. Row `b` of the decoder
/// attends over the nodes of segment `b`.
#[derive(Debug, Clone)]
pub struct Memory {
    pub nodes: Var,
    /// `W_h h_i + b`, precomputed once per batch.
    pub keys: Var,
    pub segs: Rc<Segments>,
    pub copy_mask: Rc<[bool]>,
    pub copy_targets: Rc<[(usize, usize)]>,
    pub ext_len: usize,
}

impl Memory {
    /// Memory whose segment `i` is a copy of segment `rows[i]`.
    pub fn select<F: Scalar>(&self, g: &mut Graph<'_, F>, rows: &[usize]) -> Memory {
        let mut idx = Vec::new();
        let mut lengths = Vec::with_capacity(rows.len());
        let mut mask = Vec::new();
        let mut targets = Vec::new();
        for (new_row, &r) in rows.iter().enumerate() {
            let range = self.segs.range(r);
            lengths.push(range.len());
            for i in range {
                idx.push(i);
                mask.push(self.copy_mask[i]);
                targets.push((new_row, self.copy_targets[i].1));
            }
        }
        let idx: Rc<[usize]> = Rc::from(idx);
        Memory {
            nodes: g.gather_rows(self.nodes, Rc::clone(&idx)),
            keys: g.gather_rows(self.keys, idx),
            segs: Rc::new(Segments::from_lengths(&lengths)),
            copy_mask: Rc::from(mask),
            copy_targets: Rc::from(targets),
            ext_len: self.ext_len,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
    /// Previous context vector `h*_{t-1}`.
    pub context: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct StepOutput {
    /// `nodes x 1`, summing to one per segment.
    pub attention: Var,
    pub context: Var,
    /// `rows x 1`; absent when copying is disabled.
    pub p_gen: Option<Var>,
    /// `rows x ext_len` final distribution.
    pub dist: Var,
}

#[derive(Debug, Clone)]
pub struct Decoder {
    pub cell: LstmCell,
    pub init_h: Linear,
    pub init_c: Linear,
    pub attn_memory: Linear,
    pub attn_state: Linear,
    pub attn_v: Linear,
    pub output: Linear,
    pub p_gen: Option<Linear>,
    pub opts: DecoderOptions,
}

impl Decoder {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, opts: DecoderOptions, rng: &mut ChaCha8Rng) -> Self {
        let d = opts.hidden;
        let input = if opts.input_feeding { opts.word_dim + d } else { opts.word_dim };
        Decoder {
            cell: LstmCell::new(store, "decoder.lstm", input, d, rng),
            init_h: Linear::new(store, "decoder.init_h", d, d, true, rng),
            init_c: Linear::new(store, "decoder.init_c", d, d, true, rng),
            attn_memory: Linear::new(store, "decoder.attn_memory", d, d, true, rng),
            attn_state: Linear::new(store, "decoder.attn_state", d, d, false, rng),
            attn_v: Linear::new(store, "decoder.attn_v", d, 1, false, rng),
            output: Linear::new(store, "decoder.output", 2 * d, opts.vocab_size, true, rng),
            p_gen: opts
                .copy
                .then(|| Linear::new(store, "decoder.p_gen", 2 * d + opts.word_dim, 1, true, rng)),
            opts,
        }
    }

    /// Builds the attention memory. With copying on, every segment needs
    /// at least one copyable node.
    pub fn memory<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        nodes: Var,
        segs: Rc<Segments>,
        copy_mask: Rc<[bool]>,
        copy_targets: Rc<[(usize, usize)]>,
        ext_len: usize,
    ) -> Result<Memory> {
        if self.opts.copy {
            if let Some(b) = (0..segs.count()).find(|&b| !segs.range(b).any(|i| copy_mask[i])) {
                return Err(Error::NoCopyableNodes {
                    example: b.to_string(),
                });
            }
        }
        let keys = self.attn_memory.forward(g, nodes);
        Ok(Memory {
            nodes,
            keys,
            segs,
            copy_mask,
            copy_targets,
            ext_len,
        })
    }

    /// `s_0`, `c_0` from the graph embedding; zero initial context.
    pub fn initial_state<F: Scalar>(&self, g: &mut Graph<'_, F>, graph_emb: Var) -> DecoderState {
        let rows = g.shape(graph_emb).0;
        DecoderState {
            h: self.init_h.forward(g, graph_emb),
            c: self.init_c.forward(g, graph_emb),
            context: g.zeros((rows, self.opts.hidden)),
        }
    }

    /// `score_i = v · tanh(W_h h_i + b + W_s s)`, softmax within each
    /// segment, context = attention-weighted node sum.
    pub fn attend<F: Scalar>(&self, g: &mut Graph<'_, F>, s: Var, mem: &Memory) -> (Var, Var) {
        let sp = self.attn_state.forward(g, s);
        let sp = g.gather_rows(sp, Rc::from(mem.segs.owners()));
        let e = g.add(mem.keys, sp);
        let e = g.tanh(e);
        let scores = self.attn_v.forward(g, e);
        let w = g.segment_softmax(scores, Rc::clone(&mem.segs));
        let ctx = g.segment_weighted_sum(w, mem.nodes, Rc::clone(&mem.segs));
        (w, ctx)
    }

    /// `p_gen · P_vocab` padded to the extended vocabulary, plus the
    /// entity-masked attention scattered onto name indices with weight
    /// `1 − p_gen`.
    pub fn mix<F: Scalar>(g: &mut Graph<'_, F>, p_vocab: Var, p_gen: Var, attention: Var, mem: &Memory) -> Var {
        let rows = g.shape(p_vocab).0;
        let gen = g.mul_col(p_vocab, p_gen);
        let gen = g.pad_cols(gen, mem.ext_len);
        let copy_w = g.segment_normalize(attention, Rc::clone(&mem.copy_mask), Rc::clone(&mem.segs));
        let p_copy = g.one_minus(p_gen);
        let p_copy = g.gather_rows(p_copy, Rc::from(mem.segs.owners()));
        let copy_w = g.mul(copy_w, p_copy);
        let copy = g.scatter_cols(copy_w, Rc::clone(&mem.copy_targets), (rows, mem.ext_len));
        g.add(gen, copy)
    }

    /// One decoding step from input embedding `x`.
    pub fn step<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        state: DecoderState,
        x: Var,
        mem: &Memory,
        state_mask: Option<Var>,
    ) -> (StepOutput, DecoderState) {
        let input = if self.opts.input_feeding {
            g.concat_cols(&[x, state.context])
        } else {
            x
        };
        let (h, c) = self.cell.step(g, input, state.h, state.c);
        let s = match state_mask {
            Some(m) => g.mul(h, m),
            None => h,
        };
        let (attention, context) = self.attend(g, s, mem);
        let sc = g.concat_cols(&[s, context]);
        let logits = self.output.forward(g, sc);
        let p_vocab = g.softmax_rows(logits);
        let (p_gen, dist) = match &self.p_gen {
            Some(lin) => {
                let feats = g.concat_cols(&[context, s, x]);
                let z = lin.forward(g, feats);
                let p = g.sigmoid(z);
                (Some(p), Self::mix(g, p_vocab, p, attention, mem))
            }
            None => (None, g.pad_cols(p_vocab, mem.ext_len)),
        };
        let out = StepOutput {
            attention,
            context,
            p_gen,
            dist,
        };
        (out, DecoderState { h, c, context })
    }

    /// Input embeddings for emitted indices: a word row, or the mean of a
    /// name's word rows.
    pub fn embed_output<F: Scalar>(
        g: &mut Graph<'_, F>,
        words: &WordEmbeddings,
        ext: &ExtendedVocabulary,
        indices: &[usize],
    ) -> Var {
        let rows: Vec<Vec<usize>> = indices.iter().map(|&i| ext.input_ids(i)).collect();
        words.mean_rows(g, &rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::UNK;
    use crate::testutil::max_grad_error;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};

    fn names(list: &[&[Option<&str>]]) -> Vec<Vec<Option<Vec<String>>>> {
        list.iter()
            .map(|ex| {
                ex.iter()
                    .map(|n| n.map(|s| s.split(' ').map(str::to_string).collect()))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn extended_vocabulary_indices() {
        let base = Arc::new(Vocabulary::from_tokens(["rome", "who"]));
        let ext = ExtendedVocabulary::new(
            base.clone(),
            &names(&[
                &[Some("rome"), Some("new york"), None],
                &[Some("new york"), Some("paris")],
            ]),
        );
        assert_eq!(ext.node_index(0, 0), Some(base.lookup("rome")));
        let ny = ext.node_index(0, 1).unwrap();
        assert_eq!(ny, base.len());
        assert_eq!(ext.node_index(1, 0), Some(ny));
        assert_eq!(ext.node_index(1, 1), Some(base.len() + 1));
        assert_eq!(ext.node_index(0, 2), None);
        assert_eq!(ext.len(), base.len() + 2);
        assert_eq!(ext.surface(ny), vec!["new", "york"]);
        assert_eq!(ext.input_ids(ny), vec![UNK, UNK]);
        let valid = ext.valid_mask(0);
        assert!(valid[ny] && !valid[base.len() + 1]);
        assert_eq!(ext.to_words(&[base.lookup("who"), ny, EOS, ny]), vec!["who", "new", "york"]);
    }

    struct Fixture {
        store: ParamStore<f64>,
        dec: Decoder,
        words: WordEmbeddings,
        ext: ExtendedVocabulary,
        nodes: ParamId,
        graph: ParamId,
    }

    use crate::autodiff::ParamId;

    /// Two examples: (entity "rome", entity "new york", predicate) and
    /// (entity "rome", entity "rome", predicate, entity "paris").
    fn fixture(copy: bool, seed: u64) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let vocab = Arc::new(Vocabulary::from_tokens(["rome", "who", "is", "new", "york"]));
        let words = WordEmbeddings::new(&mut store, &vocab, 3, None, &mut rng).unwrap();
        store.get_mut(words.table).mapv_inplace(|x| 10.0 * x);
        let dec = Decoder::new(
            &mut store,
            DecoderOptions {
                hidden: 4,
                word_dim: 3,
                vocab_size: vocab.len(),
                copy,
                input_feeding: true,
            },
            &mut rng,
        );
        let ext = ExtendedVocabulary::new(
            vocab,
            &if copy {
                names(&[
                    &[Some("rome"), Some("new york"), None],
                    &[Some("rome"), Some("rome"), None, Some("paris")],
                ])
            } else {
                names(&[&[None, None, None], &[None, None, None, None]])
            },
        );
        let nodes = store.add_uniform("nodes", (7, 4), 1.0, &mut rng);
        let graph = store.add_uniform("graph", (2, 4), 1.0, &mut rng);
        Fixture {
            store,
            dec,
            words,
            ext,
            nodes,
            graph,
        }
    }

    fn memory(f: &Fixture, g: &mut Graph<'_, f64>) -> Memory {
        let segs = Rc::new(Segments::from_lengths(&[3, 4]));
        let mask: Vec<bool> = (0..7)
            .map(|i| {
                let ex = usize::from(i >= 3);
                f.ext.node_index(ex, i - 3 * ex).is_some()
            })
            .collect();
        let targets: Vec<(usize, usize)> = (0..7)
            .map(|i| {
                let ex = usize::from(i >= 3);
                (ex, f.ext.node_index(ex, i - 3 * ex).unwrap_or(0))
            })
            .collect();
        let nodes = g.param(f.nodes);
        f.dec
            .memory(g, nodes, segs, Rc::from(mask), Rc::from(targets), f.ext.len())
            .unwrap()
    }

    fn run_steps(f: &Fixture, g: &mut Graph<'_, f64>, inputs: &[[usize; 2]]) -> Vec<StepOutput> {
        let mem = memory(f, g);
        let hg = g.param(f.graph);
        let mut st = f.dec.initial_state(g, hg);
        let mut outs = Vec::new();
        for tok in inputs {
            let x = Decoder::embed_output(g, &f.words, &f.ext, tok);
            let (o, s) = f.dec.step(g, st, x, &mem, None);
            outs.push(o);
            st = s;
        }
        outs
    }

    #[test]
    fn distributions_are_normalized_and_mask_predicates() {
        let f = fixture(true, 1);
        let mut g = Graph::inference(&f.store);
        let ny = f.ext.node_index(0, 1).unwrap();
        let outs = run_steps(&f, &mut g, &[[SOS, SOS], [ny, 4], [4, ny]]);
        for o in outs {
            let a = g.value(o.attention);
            assert!((a.slice(ndarray::s![0..3, ..]).sum() - 1.0).abs() < 1e-12);
            assert!((a.slice(ndarray::s![3..7, ..]).sum() - 1.0).abs() < 1e-12);
            let d = g.value(o.dist);
            for r in 0..2 {
                assert!((d.row(r).sum() - 1.0).abs() < 1e-12);
            }
            // example 0 cannot emit example 1's "paris"
            let paris = f.ext.node_index(1, 3).unwrap();
            assert_eq!(d[(0, paris)], 0.0);
            let p = g.value(o.p_gen.unwrap());
            assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }

    #[test]
    fn forced_switch_values() {
        let mut f = fixture(true, 2);
        let lin = f.dec.p_gen.clone().unwrap();
        f.store.get_mut(lin.weight).fill(0.0);
        // p_gen → 1
        f.store.get_mut(lin.bias.unwrap()).fill(80.0);
        let mut g = Graph::inference(&f.store);
        let o = run_steps(&f, &mut g, &[[SOS, SOS]])[0];
        let d = g.value(o.dist).clone();
        assert!(d.slice(ndarray::s![.., f.ext.base_len()..]).iter().all(|&x| x < 1e-30));
        drop(g);
        // p_gen → 0: all mass on example-local names
        f.store.get_mut(lin.bias.unwrap()).fill(-80.0);
        let mut g = Graph::inference(&f.store);
        let o = run_steps(&f, &mut g, &[[SOS, SOS]])[0];
        let d = g.value(o.dist);
        let rome = f.ext.node_index(1, 0).unwrap();
        let paris = f.ext.node_index(1, 3).unwrap();
        assert!((d[(1, rome)] + d[(1, paris)] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mix_by_hand() {
        // 2 entities + 1 predicate, attention (0.2, 0.3, 0.5), p_gen 0
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let mem = Memory {
            nodes: g.zeros((3, 1)),
            keys: g.zeros((3, 1)),
            segs: Rc::new(Segments::from_lengths(&[3])),
            copy_mask: Rc::from(vec![true, true, false]),
            copy_targets: Rc::from(vec![(0, 2), (0, 3), (0, 0)]),
            ext_len: 4,
        };
        let p_vocab = g.constant(array![[0.5, 0.5]]);
        let att = g.constant(array![[0.2], [0.3], [0.5]]);
        let p0 = g.constant(array![[0.0]]);
        let d = Decoder::mix(&mut g, p_vocab, p0, att, &mem);
        let v = g.value(d);
        assert!((v[(0, 2)] - 0.4).abs() < 1e-15 && (v[(0, 3)] - 0.6).abs() < 1e-15);
        assert_eq!(v[(0, 0)], 0.0);
        // a shared name pools both nodes' mass
        let pooled = Memory {
            copy_targets: Rc::from(vec![(0, 2), (0, 2), (0, 0)]),
            ..mem
        };
        let d = Decoder::mix(&mut g, p_vocab, p0, att, &pooled);
        assert!((g.value(d)[(0, 2)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn attention_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::<f64>::new();
        let dec = Decoder::new(
            &mut store,
            DecoderOptions {
                hidden: 2,
                word_dim: 2,
                vocab_size: 5,
                copy: true,
                input_feeding: true,
            },
            &mut rng,
        );
        store.get_mut(dec.attn_state.weight).fill(0.0);
        *store.get_mut(dec.attn_memory.weight) = array![[1.0, 0.0], [0.0, 2.0]];
        *store.get_mut(dec.attn_memory.bias.unwrap()) = array![[0.1, -0.2]];
        *store.get_mut(dec.attn_v.weight) = array![[1.0], [-1.0]];
        let h = array![[0.5, 0.0], [0.0, 0.5], [1.0, 1.0]];
        let mut g = Graph::inference(&store);
        let nodes = g.constant(h.clone());
        let mem = dec
            .memory(
                &mut g,
                nodes,
                Rc::new(Segments::from_lengths(&[3])),
                Rc::from(vec![true; 3]),
                Rc::from(vec![(0, 0); 3]),
                5,
            )
            .unwrap();
        let s = g.constant(array![[3.0, -1.0]]);
        let (w, ctx) = dec.attend(&mut g, s, &mem);
        let scores: Vec<f64> = h
            .rows()
            .into_iter()
            .map(|r| (r[0] + 0.1).tanh() - (2.0 * r[1] - 0.2).tanh())
            .collect();
        let z: f64 = scores.iter().map(|s| s.exp()).sum();
        for (i, s) in scores.iter().enumerate() {
            assert!((g.value(w)[(i, 0)] - s.exp() / z).abs() < 1e-12);
        }
        let expect_ctx: f64 = (0..3).map(|i| scores[i].exp() / z * h[(i, 0)]).sum();
        assert!((g.value(ctx)[(0, 0)] - expect_ctx).abs() < 1e-12);
    }

    #[test]
    fn attention_trivial_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let dec = Decoder::new(
            &mut store,
            DecoderOptions {
                hidden: 3,
                word_dim: 2,
                vocab_size: 5,
                copy: false,
                input_feeding: false,
            },
            &mut rng,
        );
        let mut g = Graph::inference(&store);
        let nodes = g.constant(array![[1.0, 2.0, 3.0], [0.5, 0.5, 0.5], [0.5, 0.5, 0.5]]);
        let mem = dec
            .memory(
                &mut g,
                nodes,
                Rc::new(Segments::from_lengths(&[1, 2])),
                Rc::from(vec![false; 3]),
                Rc::from(vec![(0, 0); 3]),
                5,
            )
            .unwrap();
        let s = g.constant(array![[0.3, -0.2, 0.9], [1.0, 1.0, 1.0]]);
        let (w, ctx) = dec.attend(&mut g, s, &mem);
        assert_eq!(g.value(w)[(0, 0)], 1.0);
        assert_eq!(g.value(ctx).row(0).to_vec(), vec![1.0, 2.0, 3.0]);
        assert!((g.value(w)[(1, 0)] - 0.5).abs() < 1e-15);
        assert!((g.value(w)[(2, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn no_copyable_nodes_is_an_error() {
        let f = fixture(true, 0);
        let mut g = Graph::inference(&f.store);
        let nodes = g.param(f.nodes);
        let err = f
            .dec
            .memory(
                &mut g,
                nodes,
                Rc::new(Segments::from_lengths(&[3, 4])),
                Rc::from(vec![true, false, false, false, false, false, false]),
                Rc::from(vec![(0, 0); 7]),
                f.ext.len(),
            )
            .unwrap_err();
        assert!(err.to_string().contains("no copyable nodes"));
    }

    #[test]
    fn embed_output_means_name_rows() {
        let mut store = ParamStore::<f64>::new();
        let vocab = Arc::new(Vocabulary::from_tokens(["giza", "necropolis", "sphinx"]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let words = WordEmbeddings::new(&mut store, &vocab, 4, None, &mut rng).unwrap();
        let (gz, nc) = (vocab.lookup("giza"), vocab.lookup("necropolis"));
        store.get_mut(words.table).row_mut(gz).assign(&array![1.0, 2.0, 3.0, 4.0]);
        store.get_mut(words.table).row_mut(nc).assign(&array![3.0, 0.0, -1.0, 2.0]);
        let ext = ExtendedVocabulary::new(
            vocab,
            &names(&[&[Some("giza necropolis"), Some("giza"), Some("giza giza")]]),
        );
        let mut g = Graph::inference(&store);
        let idx: Vec<usize> = (0..3).map(|n| ext.node_index(0, n).unwrap()).collect();
        let x = Decoder::embed_output(&mut g, &words, &ext, &idx);
        let v = g.value(x);
        assert_eq!(v.row(0).to_vec(), vec![2.0, 1.0, 1.0, 3.0]);
        assert_eq!(v.row(1), store.get(words.table).row(gz));
        assert_eq!(v.row(2), v.row(1));
    }

    fn step_grad(copy: bool, seed: u64) -> f64 {
        let f = fixture(copy, seed);
        let ny = f.ext.node_index(0, 1).unwrap_or(4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // the log term only reads entries an example can emit
        let w1 = Array2::from_shape_fn((2, f.ext.len()), |(r, c)| {
            let x: f64 = rng.random_range(-1.0..1.0);
            if f.ext.valid_mask(r)[c] {
                x
            } else {
                0.0
            }
        });
        let w2 = w1.mapv(|x| 0.5 - x);
        max_grad_error(&f.store, 20, |g| {
            let outs = run_steps(&f, g, &[[SOS, SOS], [ny, 5]]);
            let l0 = g.log(outs[0].dist);
            let a = g.weighted_sum(l0, w1.clone());
            let b = g.weighted_sum(outs[1].dist, w2.clone());
            g.add(a, b)
        })
    }

    #[test]
    fn step_gradients_match_finite_differences() {
        for seed in 0..3 {
            for copy in [true, false] {
                let err = step_grad(copy, seed);
                assert!(err < 1e-4, "copy={copy} seed={seed}: relative error {err}");
            }
        }
    }

    #[test]
    fn memory_select_replicates_segments() {
        let f = fixture(true, 4);
        let mut g = Graph::inference(&f.store);
        let mem = memory(&f, &mut g);
        let sel = mem.select(&mut g, &[1, 1, 0]);
        assert_eq!(sel.segs.total(), 11);
        assert_eq!(g.value(sel.nodes).row(0), g.value(mem.nodes).row(3));
        assert_eq!(sel.copy_targets[4], (1, mem.copy_targets[3].1));
        assert_eq!(&sel.copy_mask[8..], &mem.copy_mask[..3]);
    }
}
