//! Initial node (and edge) embeddings.
//!
//! Word mode runs one BiLSTM over entity text and another over predicate
//! text, concatenates the answer markup vector and projects back to the
//! hidden size. KG-table mode replaces the BiLSTM output with a vector
//! looked up in a precomputed embedding table.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::rc::Rc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Csr, Graph, ParamId, ParamStore, Scalar, Var};
use crate::batch::GraphBatch;
use crate::dataset::{Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::graph::NodeKind;
use crate::nn::{Dropout, Linear, LstmCell};

/// Bound of the uniform initializer for trainable word vectors.
pub const WORD_INIT_BOUND: f64 = 0.05;

/// Pretrained vectors are frozen only for tokens seen more than this many
/// times in training.
pub const FREEZE_MIN_COUNT: usize = 3;

/// Word vectors in GloVe text format (`token v1 v2 ...`).
#[derive(Debug, Clone, Default)]
pub struct PretrainedVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl PretrainedVectors {
    /// Parses GloVe-style text, keeping only tokens in `keep` when given.
    pub fn parse(text: &str, keep: Option<&HashSet<String>>) -> Result<Self> {
        let mut out = PretrainedVectors::default();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            if keep.is_some_and(|k| !k.contains(token)) {
                continue;
            }
            let vec = parts
                .map(|x| x.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("word vectors line {}: {e}", i + 1)))?;
            if out.dim == 0 {
                out.dim = vec.len();
            } else if vec.len() != out.dim {
                return Err(Error::Config(format!(
                    "word vectors line {}: expected {} values, found {}",
                    i + 1,
                    out.dim,
                    vec.len()
                )));
            }
            out.vectors.insert(token.to_string(), vec);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>, keep: Option<&HashSet<String>>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?, keep)
    }
}

/// Word embedding matrix shared by the encoder and decoder.
#[derive(Debug, Clone)]
pub struct WordEmbeddings {
    pub table: ParamId,
    pub dim: usize,
}

impl WordEmbeddings {
    /// Rows default to uniform noise; tokens frequent enough in training
    /// that have a pretrained vector take it and are frozen.
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        vocab: &Vocabulary,
        dim: usize,
        pretrained: Option<&PretrainedVectors>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut table = Array2::from_shape_simple_fn((vocab.len(), dim), || {
            F::of(rng.random_range(-WORD_INIT_BOUND..=WORD_INIT_BOUND))
        });
        table.row_mut(PAD).fill(F::zero());
        let mut frozen = vec![false; vocab.len()];
        if let Some(pre) = pretrained {
            if pre.dim != dim && !pre.vectors.is_empty() {
                return Err(Error::Config(format!(
                    "pretrained vectors have dimension {}, model expects {dim}",
                    pre.dim
                )));
            }
            for (i, tok) in vocab.tokens().iter().enumerate() {
                if vocab.count(i) < FREEZE_MIN_COUNT {
                    continue;
                }
                if let Some(v) = pre.vectors.get(tok) {
                    for (dst, &x) in table.row_mut(i).iter_mut().zip(v) {
                        *dst = F::of(x);
                    }
                    frozen[i] = true;
                }
            }
        }
        let table = store.add("word_embeddings", table);
        if frozen.iter().any(|&f| f) {
            store.set_frozen_rows(table, frozen);
        }
        Ok(WordEmbeddings { table, dim })
    }

    /// Row `i` of the result is the mean of the table rows listed in
    /// `rows[i]` (a single entry is a plain lookup).
    pub fn mean_rows<F: Scalar>(&self, g: &mut Graph<'_, F>, rows: &[Vec<usize>]) -> Var {
        let vocab_len = g.params().get(self.table).nrows();
        let mut triplets = Vec::new();
        for (r, ids) in rows.iter().enumerate() {
            assert!(!ids.is_empty(), "empty embedding lookup");
            let w = F::one() / F::of(ids.len() as f64);
            triplets.extend(ids.iter().map(|&id| (r, id, w)));
        }
        let m = Rc::new(Csr::from_triplets(rows.len(), vocab_len, triplets));
        let table = g.param(self.table);
        g.spmm(m, table)
    }
}

/// Two LSTMs reading a token sequence in opposite directions.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

impl BiLstm {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        input_dim: usize,
        hidden_per_direction: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        BiLstm {
            forward: LstmCell::new(store, &format!("{name}.fwd"), input_dim, hidden_per_direction, rng),
            backward: LstmCell::new(store, &format!("{name}.bwd"), input_dim, hidden_per_direction, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden + self.backward.hidden
    }

    /// Encodes each sequence to `[last forward state; last backward state]`.
    ///
    /// Sequences of different lengths run side by side; a row's state stops
    /// changing once its sequence is exhausted. One embedding dropout mask
    /// per sequence is reused at every step.
    pub fn encode<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        words: &WordEmbeddings,
        seqs: &[Vec<usize>],
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        if seqs.iter().any(|s| s.is_empty()) {
            return Err(Error::EmptyText);
        }
        let rows = seqs.len();
        let max_len = seqs.iter().map(Vec::len).max().unwrap_or(0);
        let input_mask = dropout.embed_mask::<F>((rows, words.dim)).map(|m| g.constant(m));
        let table = g.param(words.table);

        let mut finals = Vec::with_capacity(2);
        for (cell, reversed) in [(&self.forward, false), (&self.backward, true)] {
            let mut h = g.zeros((rows, cell.hidden));
            let mut c = g.zeros((rows, cell.hidden));
            for t in 0..max_len {
                let ids: Vec<usize> = seqs
                    .iter()
                    .map(|s| match (t < s.len(), reversed) {
                        (false, _) => PAD,
                        (true, false) => s[t],
                        (true, true) => s[s.len() - 1 - t],
                    })
                    .collect();
                let mut x = g.gather_rows(table, Rc::from(ids));
                if let Some(m) = input_mask {
                    x = g.mul(x, m);
                }
                let (h_new, c_new) = cell.step(g, x, h, c);
                if seqs.iter().all(|s| t < s.len()) {
                    h = h_new;
                    c = c_new;
                } else {
                    let live = Array2::from_shape_fn((rows, 1), |(r, _)| {
                        if t < seqs[r].len() {
                            F::one()
                        } else {
                            F::zero()
                        }
                    });
                    let live = g.constant(live);
                    h = masked_update(g, h, h_new, live);
                    c = masked_update(g, c, c_new, live);
                }
            }
            finals.push(h);
        }
        Ok(g.concat_cols(&finals))
    }

    /// Encodes a single text attribute; `1 x output_dim`.
    pub fn encode_text_attribute<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        words: &WordEmbeddings,
        tokens: &[usize],
    ) -> Result<Var> {
        self.encode(g, words, &[tokens.to_vec()], &mut Dropout::Eval)
    }
}

/// `old + live ⊙ (new − old)` with a 0/1 column `live`.
fn masked_update<F: Scalar>(g: &mut Graph<'_, F>, old: Var, new: Var, live: Var) -> Var {
    let diff = g.sub(new, old);
    let step = g.mul_col(diff, live);
    g.add(old, step)
}

/// Learnable is-answer / not-answer vectors.
#[derive(Debug, Clone)]
pub struct AnswerMarkup {
    pub table: ParamId,
    pub dim: usize,
}

impl AnswerMarkup {
    pub const NOT_ANSWER: usize = 0;
    pub const ANSWER: usize = 1;

    pub fn new<F: Scalar>(store: &mut ParamStore<F>, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = store.add_uniform("answer_markup", (2, dim), 0.1, rng);
        AnswerMarkup { table, dim }
    }

    pub fn lookup<F: Scalar>(&self, g: &mut Graph<'_, F>, is_answer: &[bool]) -> Var {
        let rows: Vec<usize> = is_answer
            .iter()
            .map(|&a| if a { Self::ANSWER } else { Self::NOT_ANSWER })
            .collect();
        let table = g.param(self.table);
        g.gather_rows(table, Rc::from(rows))
    }
}

/// Precomputed node/edge vectors keyed by node text; text lines of the form
/// `id<TAB>v1 v2 ... vk`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KgEmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl KgEmbeddingTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = KgEmbeddingTable::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, values) = line
                .split_once('\t')
                .ok_or_else(|| Error::Config(format!("KG table line {}: missing tab", i + 1)))?;
            let v = values
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("KG table line {}: {e}", i + 1)))?;
            if out.dim == 0 {
                out.dim = v.len();
            }
            if v.len() != out.dim || v.is_empty() {
                return Err(Error::Config(format!(
                    "KG table line {}: expected {} values, found {}",
                    i + 1,
                    out.dim,
                    v.len()
                )));
            }
            out.vectors.insert(id.to_string(), v);
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Inverse of [`KgEmbeddingTable::parse`], keys sorted.
    pub fn to_text(&self) -> String {
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let v: Vec<String> = self.vectors[k].iter().map(f64::to_string).collect();
            out.push_str(&format!("{k}\t{}\n", v.join(" ")));
        }
        out
    }

    fn rows<F: Scalar>(&self, keys: &[String]) -> Result<Array2<F>> {
        let mut out = Array2::zeros((keys.len(), self.dim));
        for (r, key) in keys.iter().enumerate() {
            let v = self
                .vectors
                .get(key)
                .ok_or_else(|| Error::MissingKgEntry(key.clone()))?;
            for (dst, &x) in out.row_mut(r).iter_mut().zip(v) {
                *dst = F::of(x);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeInit {
    Word,
    KgTable,
}

/// Node matrix `X^e` (rows in batch node order) and, for the edge-aware
/// encoder, edge matrix `X^p`.
#[derive(Debug, Clone, Copy)]
pub struct InitialEmbeddings {
    pub nodes: Var,
    pub edges: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct NodeInitializer {
    pub mode: NodeInit,
    pub node_lstm: Option<BiLstm>,
    pub edge_lstm: Option<BiLstm>,
    pub markup: Option<AnswerMarkup>,
    pub node_proj: Linear,
    pub edge_proj: Option<Linear>,
}

/// Construction options for [`NodeInitializer`].
#[derive(Debug, Clone, Copy)]
pub struct InitOptions {
    pub mode: NodeInit,
    pub word_dim: usize,
    pub hidden: usize,
    /// `None` disables the answer markup.
    pub markup_dim: Option<usize>,
    /// Width of KG-table vectors (KG-table mode only).
    pub kg_dim: usize,
    /// Whether edges get their own embeddings (edge-aware encoder).
    pub edge_features: bool,
}

impl NodeInitializer {
    pub fn new<F: Scalar>(store: &mut ParamStore<F>, opts: InitOptions, rng: &mut ChaCha8Rng) -> Self {
        let half = opts.hidden / 2;
        let (node_lstm, edge_lstm, feat_dim) = match opts.mode {
            NodeInit::Word => {
                let node = BiLstm::new(store, "node_lstm", opts.word_dim, half, rng);
                let edge = BiLstm::new(store, "edge_lstm", opts.word_dim, half, rng);
                let d = node.output_dim();
                (Some(node), Some(edge), d)
            }
            NodeInit::KgTable => (None, None, opts.kg_dim),
        };
        let markup = opts.markup_dim.map(|d| AnswerMarkup::new(store, d, rng));
        let in_dim = feat_dim + opts.markup_dim.unwrap_or(0);
        let node_proj = Linear::new(store, "node_proj", in_dim, opts.hidden, true, rng);
        let edge_proj = opts
            .edge_features
            .then(|| Linear::new(store, "edge_proj", in_dim, opts.hidden, true, rng));
        NodeInitializer {
            mode: opts.mode,
            node_lstm,
            edge_lstm,
            markup,
            node_proj,
            edge_proj,
        }
    }

    /// Text features (BiLSTM output or KG vectors) for a list of texts.
    fn features<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        words: &WordEmbeddings,
        lstm: Option<&BiLstm>,
        tokens: &[Vec<usize>],
        keys: &[String],
        kg: Option<&KgEmbeddingTable>,
        dropout: &mut Dropout<'_>,
    ) -> Result<Var> {
        match self.mode {
            NodeInit::Word => {
                let out = lstm.expect("word mode has BiLSTMs").encode(g, words, tokens, dropout)?;
                Ok(dropout.apply_rnn(g, out))
            }
            NodeInit::KgTable => {
                let table = kg.ok_or_else(|| Error::Config("KG-table mode needs an embedding table".into()))?;
                let rows = table.rows::<F>(keys)?;
                Ok(g.constant(rows))
            }
        }
    }

    fn with_markup<F: Scalar>(&self, g: &mut Graph<'_, F>, feats: Var, is_answer: &[bool]) -> Var {
        match &self.markup {
            Some(m) => {
                let mk = m.lookup(g, is_answer);
                g.concat_cols(&[feats, mk])
            }
            None => feats,
        }
    }

    pub fn init<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        words: &WordEmbeddings,
        batch: &GraphBatch,
        kg: Option<&KgEmbeddingTable>,
        dropout: &mut Dropout<'_>,
    ) -> Result<InitialEmbeddings> {
        // entity and predicate texts go through different BiLSTMs
        let (mut ent_rows, mut pred_rows) = (Vec::new(), Vec::new());
        for (i, kind) in batch.node_kinds.iter().enumerate() {
            match kind {
                NodeKind::Entity => ent_rows.push(i),
                NodeKind::Predicate => pred_rows.push(i),
            }
        }
        let mut parts = Vec::new();
        let mut order = vec![0usize; batch.node_count()];
        let mut next = 0;
        for (rows, lstm) in [(&ent_rows, &self.node_lstm), (&pred_rows, &self.edge_lstm)] {
            if rows.is_empty() {
                continue;
            }
            let tokens: Vec<Vec<usize>> = rows.iter().map(|&i| batch.node_tokens[i].clone()).collect();
            let keys: Vec<String> = rows.iter().map(|&i| batch.node_keys[i].clone()).collect();
            parts.push(self.features(g, words, lstm.as_ref(), &tokens, &keys, kg, dropout)?);
            for &i in rows.iter() {
                order[i] = next;
                next += 1;
            }
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.concat_rows(&parts) };
        let feats = if order.iter().enumerate().all(|(i, &o)| i == o) {
            stacked
        } else {
            g.gather_rows(stacked, Rc::from(order))
        };
        let feats = self.with_markup(g, feats, &batch.node_is_answer);
        let nodes = self.node_proj.forward(g, feats);

        let edges = match &self.edge_proj {
            Some(proj) if !batch.edge_tokens.is_empty() => {
                let feats = self.features(
                    g,
                    words,
                    self.edge_lstm.as_ref(),
                    &batch.edge_tokens,
                    &batch.edge_keys,
                    kg,
                    dropout,
                )?;
                let feats = self.with_markup(g, feats, &vec![false; batch.edge_tokens.len()]);
                Some(proj.forward(g, feats))
            }
            _ => None,
        };
        Ok(InitialEmbeddings { nodes, edges })
    }
}
