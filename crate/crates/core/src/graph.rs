//! KG subgraphs and their Levi transformation.
//!
//! A [`KGSubgraph`] is a directed multigraph whose edges carry predicate
//! text. [`to_levi`] turns every edge instance into a node of its own, so
//! `(s, p, o)` becomes `s → p → o` and a relation-agnostic GNN can read the
//! predicate text like any other node attribute.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub text: String,
    pub is_answer: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredicateEdge {
    pub text: String,
    pub source: usize,
    pub target: usize,
}

/// Directed multi-relational graph. Entity ids are indices into
/// `entities`, predicate ids are indices into `edges`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KGSubgraph {
    entities: Vec<Entity>,
    edges: Vec<PredicateEdge>,
}

impl KGSubgraph {
    /// Validates endpoints and requires at least one edge.
    pub fn new(entities: Vec<Entity>, edges: Vec<PredicateEdge>) -> Result<Self> {
        if edges.is_empty() {
            return Err(Error::NoEdges { id: String::new() });
        }
        let n = entities.len();
        if let Some(e) = edges.iter().find(|e| e.source >= n || e.target >= n) {
            return Err(Error::DanglingEdge {
                from: e.source,
                to: e.target,
                nodes: n,
            });
        }
        Ok(KGSubgraph { entities, edges })
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn edges(&self) -> &[PredicateEdge] {
        &self.edges
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn answers(&self) -> impl Iterator<Item = usize> + '_ {
        self.entities
            .iter()
            .enumerate()
            .filter(|(_, e)| e.is_answer)
            .map(|(i, _)| i)
    }

    /// Copy of the graph with answer flags replaced.
    pub fn with_answers(&self, is_answer: impl Fn(usize) -> bool) -> Self {
        let mut out = self.clone();
        for (i, e) in out.entities.iter_mut().enumerate() {
            e.is_answer = is_answer(i);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeKind {
    Entity,
    Predicate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeviNode {
    pub kind: NodeKind,
    pub text: String,
    pub is_answer: bool,
}

/// Bipartite directed graph with entity and predicate nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeviGraph {
    pub nodes: Vec<LeviNode>,
    pub edges: Vec<(usize, usize)>,
}

impl LeviGraph {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn entity_mask(&self) -> Vec<bool> {
        self.nodes.iter().map(|n| n.kind == NodeKind::Entity).collect()
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`; edge order is
    /// kept.
    pub fn permuted(&self, perm: &[usize]) -> LeviGraph {
        assert_eq!(perm.len(), self.nodes.len());
        let mut nodes = self.nodes.clone();
        for (old, node) in self.nodes.iter().enumerate() {
            nodes[perm[old]] = node.clone();
        }
        let edges = self.edges.iter().map(|&(a, b)| (perm[a], perm[b])).collect();
        LeviGraph { nodes, edges }
    }

    /// Graphviz rendering; answer nodes are drawn with a double border and
    /// predicate nodes as boxes.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph levi {\n");
        for (i, n) in self.nodes.iter().enumerate() {
            let shape = match n.kind {
                NodeKind::Entity => "ellipse",
                NodeKind::Predicate => "box",
            };
            let peripheries = if n.is_answer { 2 } else { 1 };
            let label = n.text.replace('\\', "\\\\").replace('"', "\\\"");
            let _ = writeln!(
                out,
                "  n{i} [label=\"{label}\", shape={shape}, peripheries={peripheries}];"
            );
        }
        for (a, b) in &self.edges {
            let _ = writeln!(out, "  n{a} -> n{b};");
        }
        out.push_str("}\n");
        out
    }
}

/// Each triple `(s, p, o)` yields predicate node `p` with edges `s → p` and
/// `p → o`. Entities keep their ids; predicate instance `k` becomes node
/// `n + k`.
pub fn to_levi(g: &KGSubgraph) -> LeviGraph {
    let n = g.entity_count();
    let mut nodes: Vec<LeviNode> = g
        .entities()
        .iter()
        .map(|e| LeviNode {
            kind: NodeKind::Entity,
            text: e.text.clone(),
            is_answer: e.is_answer,
        })
        .collect();
    let mut edges = Vec::with_capacity(2 * g.edge_count());
    for (k, e) in g.edges().iter().enumerate() {
        nodes.push(LeviNode {
            kind: NodeKind::Predicate,
            text: e.text.clone(),
            is_answer: false,
        });
        edges.push((e.source, n + k));
        edges.push((n + k, e.target));
    }
    LeviGraph { nodes, edges }
}

/// Incoming and outgoing neighbor lists. Every entry also records the index
/// of the edge it came from, which the edge-aware encoder needs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    incoming: Vec<Vec<(usize, usize)>>,
    outgoing: Vec<Vec<(usize, usize)>>,
}

impl Adjacency {
    /// Neighbor lists are sorted by neighbor id, then edge index.
    pub fn from_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut incoming = vec![Vec::new(); node_count];
        let mut outgoing = vec![Vec::new(); node_count];
        for (k, &(from, to)) in edges.iter().enumerate() {
            if from >= node_count || to >= node_count {
                return Err(Error::DanglingEdge {
                    from,
                    to,
                    nodes: node_count,
                });
            }
            outgoing[from].push((to, k));
            incoming[to].push((from, k));
        }
        for list in incoming.iter_mut().chain(outgoing.iter_mut()) {
            list.sort_unstable();
        }
        Ok(Adjacency { incoming, outgoing })
    }

    pub fn node_count(&self) -> usize {
        self.incoming.len()
    }

    /// `N⊣(v)`
    pub fn incoming(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.incoming[v].iter().map(|&(u, _)| u)
    }

    /// `N⊢(v)`
    pub fn outgoing(&self, v: usize) -> impl Iterator<Item = usize> + '_ {
        self.outgoing[v].iter().map(|&(u, _)| u)
    }

    pub fn neighbors(&self, v: usize, dir: Direction) -> &[(usize, usize)] {
        match dir {
            Direction::Incoming => &self.incoming[v],
            Direction::Outgoing => &self.outgoing[v],
        }
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.incoming[v].len()
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.outgoing[v].len()
    }
}

/// Which neighborhood an aggregation reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Incoming neighbors; yields the backward aggregation vector.
    Incoming,
    /// Outgoing neighbors; yields the forward aggregation vector.
    Outgoing,
}

pub fn build_adjacency(g: &LeviGraph) -> Result<Adjacency> {
    Adjacency::from_edges(g.node_count(), &g.edges)
}
