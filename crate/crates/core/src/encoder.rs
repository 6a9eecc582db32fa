//! Bidirectional gated graph neural network.
//!
//! Each hop averages every node's incoming and outgoing neighborhoods
//! (self included), fuses the two aggregates with a learned gate and feeds
//! the result to a GRU whose hidden state is the node embedding. One
//! parameter set is shared by all hops.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Csr, Graph, ParamStore, Scalar, Var};
use crate::batch::GraphBatch;
use crate::embed_init::InitialEmbeddings;
use crate::error::{Error, Result};
use crate::graph::Direction;
use crate::nn::{Dropout, GruCell, Linear};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderDirection {
    #[default]
    #[serde(alias = "bi")]
    Bidirectional,
    /// Outgoing neighborhoods only.
    #[serde(alias = "fwd")]
    Forward,
    /// Incoming neighborhoods only.
    #[serde(alias = "bwd")]
    Backward,
}

/// Per-hop node matrices and the pooled graph embedding.
#[derive(Debug, Clone)]
pub struct NodeStates {
    /// `hops[0]` is the initial embedding matrix.
    pub hops: Vec<Var>,
    /// `batch x d`, one row per graph.
    pub graph: Var,
}

impl NodeStates {
    pub fn nodes(&self) -> Var {
        *self.hops.last().expect("at least the initial state")
    }
}

/// Averaging matrix over `{v} ∪ N_dir(v)`.
pub fn mean_matrix<F: Scalar>(n: usize, edges: &[(usize, usize)], dir: Direction) -> Csr<F> {
    let mut neigh: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, t) in edges {
        match dir {
            Direction::Incoming => neigh[t].push(s),
            Direction::Outgoing => neigh[s].push(t),
        }
    }
    let mut triplets = Vec::with_capacity(n + edges.len());
    for (v, ns) in neigh.iter().enumerate() {
        let w = F::one() / F::of((ns.len() + 1) as f64);
        triplets.push((v, v, w));
        triplets.extend(ns.iter().map(|&u| (v, u, w)));
    }
    Csr::from_triplets(n, n, triplets)
}

/// Averaging matrix over the stacked rows `[H; M]`, where message row
/// `n + k` belongs to edge `k`.
pub fn edge_mean_matrix<F: Scalar>(n: usize, edges: &[(usize, usize)], dir: Direction) -> Csr<F> {
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (k, &(s, t)) in edges.iter().enumerate() {
        match dir {
            Direction::Incoming => incident[t].push(k),
            Direction::Outgoing => incident[s].push(k),
        }
    }
    let mut triplets = Vec::with_capacity(n + edges.len());
    for (v, ks) in incident.iter().enumerate() {
        let w = F::one() / F::of((ks.len() + 1) as f64);
        triplets.push((v, v, w));
        triplets.extend(ks.iter().map(|&k| (v, n + k, w)));
    }
    Csr::from_triplets(n, n + edges.len(), triplets)
}

#[derive(Debug, Clone)]
pub struct BiGgnn {
    pub fuse_gate: Linear,
    pub gru: GruCell,
    pub pool: Linear,
    /// Message function `ReLU(W [h_u; e_uv] + b)` of the edge-aware variant.
    pub message: Option<Linear>,
    pub hops: usize,
    pub direction: EncoderDirection,
}

/// Precomputed aggregation operators for one batch.
struct Operators<F> {
    edges: Rc<[(usize, usize)]>,
    incoming: Rc<Csr<F>>,
    outgoing: Rc<Csr<F>>,
}

impl BiGgnn {
    pub fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        hidden: usize,
        hops: usize,
        direction: EncoderDirection,
        edge_aware: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(hops >= 1, "at least one hop");
        BiGgnn {
            fuse_gate: Linear::new(store, "encoder.fuse", 4 * hidden, hidden, true, rng),
            gru: GruCell::new(store, "encoder.gru", hidden, hidden, rng),
            pool: Linear::new(store, "encoder.pool", hidden, hidden, true, rng),
            message: edge_aware.then(|| Linear::new(store, "encoder.message", 2 * hidden, hidden, true, rng)),
            hops,
            direction,
        }
    }

    pub fn is_edge_aware(&self) -> bool {
        self.message.is_some()
    }

    /// Plain neighborhood mean for one direction.
    pub fn aggregate<F: Scalar>(
        g: &mut Graph<'_, F>,
        h: Var,
        edges: &[(usize, usize)],
        dir: Direction,
    ) -> Var {
        let n = g.shape(h).0;
        g.spmm(Rc::new(mean_matrix(n, edges, dir)), h)
    }

    /// Neighborhood mean where each neighbor contributes
    /// `ReLU(W [h_u; e_uv] + b)` and the node itself contributes `h_v`.
    pub fn aggregate_with_edges<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        h: Var,
        e: Var,
        edges: &[(usize, usize)],
        dir: Direction,
    ) -> Var {
        let n = g.shape(h).0;
        let m = Rc::new(edge_mean_matrix(n, edges, dir));
        self.edge_aggregate(g, h, e, edges, dir, m)
    }

    fn edge_aggregate<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        h: Var,
        e: Var,
        edges: &[(usize, usize)],
        dir: Direction,
        m: Rc<Csr<F>>,
    ) -> Var {
        let f = self.message.as_ref().expect("edge-aware encoder");
        let neighbor: Vec<usize> = edges
            .iter()
            .map(|&(s, t)| match dir {
                Direction::Incoming => s,
                Direction::Outgoing => t,
            })
            .collect();
        let hu = g.gather_rows(h, Rc::from(neighbor));
        let cat = g.concat_cols(&[hu, e]);
        let msg = f.forward(g, cat);
        let msg = g.relu(msg);
        let stacked = g.concat_rows(&[h, msg]);
        g.spmm(m, stacked)
    }

    /// `z ⊙ a + (1 − z) ⊙ b` with `z = σ(W [a; b; a ⊙ b; a − b] + b_z)`.
    pub fn fuse<F: Scalar>(&self, g: &mut Graph<'_, F>, a: Var, b: Var) -> Var {
        let prod = g.mul(a, b);
        let diff = g.sub(a, b);
        let cat = g.concat_cols(&[a, b, prod, diff]);
        let z = self.fuse_gate.forward(g, cat);
        let z = g.sigmoid(z);
        let gated = g.mul(z, diff);
        g.add(b, gated)
    }

    fn hop_input<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        h: Var,
        edge_emb: Option<Var>,
        ops: &Operators<F>,
        direction: EncoderDirection,
    ) -> Var {
        let agg = |g: &mut Graph<'_, F>, dir: Direction| {
            let m = match dir {
                Direction::Incoming => Rc::clone(&ops.incoming),
                Direction::Outgoing => Rc::clone(&ops.outgoing),
            };
            match edge_emb {
                Some(e) => self.edge_aggregate(g, h, e, &ops.edges, dir, m),
                None => g.spmm(m, h),
            }
        };
        match direction {
            EncoderDirection::Bidirectional => {
                let backward = agg(g, Direction::Incoming);
                let forward = agg(g, Direction::Outgoing);
                self.fuse(g, backward, forward)
            }
            EncoderDirection::Forward => agg(g, Direction::Outgoing),
            EncoderDirection::Backward => agg(g, Direction::Incoming),
        }
    }

    pub fn encode<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        init: &InitialEmbeddings,
        batch: &GraphBatch,
        dropout: &mut Dropout<'_>,
    ) -> Result<NodeStates> {
        self.encode_directed(g, init, batch, self.direction, dropout)
    }

    /// As [`BiGgnn::encode`] with an explicit direction setting.
    pub fn encode_directed<F: Scalar>(
        &self,
        g: &mut Graph<'_, F>,
        init: &InitialEmbeddings,
        batch: &GraphBatch,
        direction: EncoderDirection,
        dropout: &mut Dropout<'_>,
    ) -> Result<NodeStates> {
        let n = batch.node_count();
        let edge_emb = if self.is_edge_aware() {
            Some(init.edges.ok_or_else(|| {
                Error::Config("edge-aware encoder needs edge embeddings".into())
            })?)
        } else {
            None
        };
        let ops = if edge_emb.is_some() {
            Operators {
                edges: Rc::from(batch.edges.clone()),
                incoming: Rc::new(edge_mean_matrix(n, &batch.edges, Direction::Incoming)),
                outgoing: Rc::new(edge_mean_matrix(n, &batch.edges, Direction::Outgoing)),
            }
        } else {
            Operators {
                edges: Rc::from(batch.edges.clone()),
                incoming: Rc::new(mean_matrix(n, &batch.edges, Direction::Incoming)),
                outgoing: Rc::new(mean_matrix(n, &batch.edges, Direction::Outgoing)),
            }
        };

        let mut hops = vec![init.nodes];
        let mut h = init.nodes;
        for hop in 1..=self.hops {
            let x = self.hop_input(g, h, edge_emb, &ops, direction);
            h = self.gru.step(g, x, h);
            if !g.value(h).iter().all(|v| v.is_finite()) {
                return Err(Error::NonFiniteState { hop });
            }
            hops.push(h);
        }
        let out = dropout.apply_rnn(g, h);
        if out != h {
            hops.push(out);
        }
        let projected = self.pool.forward(g, out);
        let graph = g.segment_max(projected, &batch.segs);
        Ok(NodeStates { hops, graph })
    }
}
