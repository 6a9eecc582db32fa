//! Flattening several graphs into one block-diagonal batch.

use std::rc::Rc;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::Segments;
use crate::dataset::{tokenize, CopyAlignedTarget, QGExample, TargetStep, Vocabulary, EOS, UNK};
use crate::decoder::ExtendedVocabulary;
use crate::error::{Error, Result};
use crate::graph::{to_levi, KGSubgraph, LeviNode, NodeKind};

/// Which graph the encoder walks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphVariant {
    /// Levi graph: predicates are nodes, edges are unlabeled.
    #[default]
    #[serde(alias = "g2s-levi")]
    Levi,
    /// Original multi-relational graph with edge embeddings in the
    /// messages.
    #[serde(alias = "g2s-edge")]
    EdgeAware,
}

/// Graph as seen by the encoder. Entity `i` of the source subgraph is
/// always node `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGraph {
    pub nodes: Vec<LeviNode>,
    pub edges: Vec<(usize, usize)>,
    /// Predicate text per edge; empty for Levi graphs.
    pub edge_texts: Vec<String>,
}

impl EncoderGraph {
    pub fn new(g: &KGSubgraph, variant: GraphVariant) -> Self {
        match variant {
            GraphVariant::Levi => {
                let levi = to_levi(g);
                EncoderGraph {
                    nodes: levi.nodes,
                    edges: levi.edges,
                    edge_texts: Vec::new(),
                }
            }
            GraphVariant::EdgeAware => EncoderGraph {
                nodes: g
                    .entities()
                    .iter()
                    .map(|e| LeviNode {
                        kind: NodeKind::Entity,
                        text: e.text.clone(),
                        is_answer: e.is_answer,
                    })
                    .collect(),
                edges: g.edges().iter().map(|e| (e.source, e.target)).collect(),
                edge_texts: g.edges().iter().map(|e| e.text.clone()).collect(),
            },
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

fn token_ids(text: &str, vocab: &Vocabulary) -> Vec<usize> {
    let ids: Vec<usize> = tokenize(text).iter().map(|t| vocab.lookup(t)).collect();
    if ids.is_empty() {
        vec![UNK]
    } else {
        ids
    }
}

/// Several encoder graphs laid out one after another. Node and edge ids
/// are global; `segs` maps nodes back to examples.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub segs: Rc<Segments>,
    pub node_kinds: Vec<NodeKind>,
    pub node_tokens: Vec<Vec<usize>>,
    pub node_keys: Vec<String>,
    pub node_is_answer: Vec<bool>,
    pub edges: Vec<(usize, usize)>,
    pub edge_tokens: Vec<Vec<usize>>,
    pub edge_keys: Vec<String>,
    pub ext: ExtendedVocabulary,
    /// Nodes the decoder may copy (entities with a non-empty name).
    pub copy_mask: Rc<[bool]>,
    /// `(example, extended index)` per node; predicate rows point at
    /// index 0 and always carry zero mass.
    pub copy_targets: Rc<[(usize, usize)]>,
}

impl GraphBatch {
    /// `copy` controls whether entity names join the extended vocabulary.
    pub fn new(graphs: &[EncoderGraph], vocab: &Arc<Vocabulary>, copy: bool) -> Self {
        let lengths: Vec<usize> = graphs.iter().map(EncoderGraph::node_count).collect();
        let segs = Rc::new(Segments::from_lengths(&lengths));
        let names: Vec<Vec<Option<Vec<String>>>> = graphs
            .iter()
            .map(|g| {
                g.nodes
                    .iter()
                    .map(|n| {
                        let name = tokenize(&n.text);
                        (copy && n.kind == NodeKind::Entity && !name.is_empty()).then_some(name)
                    })
                    .collect()
            })
            .collect();
        let ext = ExtendedVocabulary::new(Arc::clone(vocab), &names);

        let mut b = GraphBatch {
            segs,
            node_kinds: Vec::new(),
            node_tokens: Vec::new(),
            node_keys: Vec::new(),
            node_is_answer: Vec::new(),
            edges: Vec::new(),
            edge_tokens: Vec::new(),
            edge_keys: Vec::new(),
            ext,
            copy_mask: Rc::from(Vec::new()),
            copy_targets: Rc::from(Vec::new()),
        };
        let mut copy_mask = Vec::new();
        let mut copy_targets = Vec::new();
        let mut offset = 0;
        for (ex, g) in graphs.iter().enumerate() {
            for (i, n) in g.nodes.iter().enumerate() {
                b.node_kinds.push(n.kind);
                b.node_tokens.push(token_ids(&n.text, vocab));
                b.node_keys.push(n.text.clone());
                b.node_is_answer.push(n.is_answer);
                let idx = b.ext.node_index(ex, i);
                copy_mask.push(idx.is_some());
                copy_targets.push((ex, idx.unwrap_or(0)));
            }
            b.edges.extend(g.edges.iter().map(|&(s, t)| (s + offset, t + offset)));
            for text in &g.edge_texts {
                b.edge_tokens.push(token_ids(text, vocab));
                b.edge_keys.push(text.clone());
            }
            offset += g.node_count();
        }
        b.copy_mask = Rc::from(copy_mask);
        b.copy_targets = Rc::from(copy_targets);
        b
    }

    pub fn size(&self) -> usize {
        self.segs.count()
    }

    pub fn node_count(&self) -> usize {
        self.segs.total()
    }

    /// Fails when some example has nothing to copy.
    pub fn check_copyable(&self, ids: &[String]) -> Result<()> {
        for ex in 0..self.size() {
            if !self.segs.range(ex).any(|i| self.copy_mask[i]) {
                return Err(Error::NoCopyableNodes {
                    example: ids.get(ex).cloned().unwrap_or_else(|| ex.to_string()),
                });
            }
        }
        Ok(())
    }

    /// Extended-vocabulary indices for a target, terminated by EOS.
    pub fn target_indices(&self, ex: usize, target: &CopyAlignedTarget) -> Vec<usize> {
        let mut out: Vec<usize> = target
            .steps
            .iter()
            .map(|s| match s {
                TargetStep::Gen(t) => self.ext.base().lookup(t),
                TargetStep::Copy(node) => self
                    .ext
                    .node_index(ex, *node)
                    .expect("copy target points at a copyable entity"),
            })
            .collect();
        out.push(EOS);
        out
    }
}

/// Examples plus their encoder graphs and supervision, ready to batch.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub example: QGExample,
    pub graph: EncoderGraph,
    pub target: CopyAlignedTarget,
}

impl PreparedExample {
    pub fn new(example: QGExample, variant: GraphVariant, copy: bool) -> Self {
        let graph = EncoderGraph::new(&example.graph, variant);
        let target = if copy {
            crate::dataset::align_copy_targets(&example)
        } else {
            CopyAlignedTarget::generate_only(&example.question)
        };
        PreparedExample { example, graph, target }
    }
}
