//! Directed communication graphs between agents.
//!
//! Nodes are stored 0-based; every external format (JSON, CSV) is 1-based.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use petgraph::algo::kosaraju_scc;
use petgraph::graph::DiGraph;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// A directed graph without self-loops on nodes `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphWire", into = "GraphWire")]
pub struct DirectedGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

/// JSON layout: `{"n": int, "edges": [[i, j], ...]}` with 1-based nodes.
#[derive(Serialize, Deserialize)]
struct GraphWire {
    n: usize,
    edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphWire> for DirectedGraph {
    type Error = Error;

    fn try_from(w: GraphWire) -> Result<Self> {
        let mut edges = Vec::with_capacity(w.edges.len());
        for [i, j] in w.edges {
            if i == 0 || j == 0 {
                return Err(Error::InvalidGraph("node indices are 1-based".into()));
            }
            edges.push((i - 1, j - 1));
        }
        DirectedGraph::new(w.n, edges)
    }
}

impl From<DirectedGraph> for GraphWire {
    fn from(g: DirectedGraph) -> Self {
        GraphWire { n: g.n, edges: g.edges.iter().map(|&(i, j)| [i + 1, j + 1]).collect() }
    }
}

impl DirectedGraph {
    /// Builds a graph from 0-based ordered pairs.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({}, {}) outside 1..={n}", i + 1, j + 1)));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", i + 1)));
            }
            set.insert((i, j));
        }
        Ok(Self { n, edges: set })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    /// Out-neighbours of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.range((i, 0)..(i + 1, 0)).map(|&(_, j)| j)
    }

    /// Every ordered pair of distinct nodes.
    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))))
    }

    /// Symmetric ring: each node linked both ways to its two cyclic neighbours.
    pub fn ring(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidGraph(format!("ring needs n >= 3, got {n}")));
        }
        Self::new(n, (0..n).flat_map(|i| [(i, (i + 1) % n), ((i + 1) % n, i)]))
    }

    /// Random Hamiltonian cycle plus each remaining ordered pair with probability `edge_prob`.
    pub fn random_strongly_connected(n: usize, edge_prob: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("random graph needs n >= 2, got {n}")));
        }
        check_prob(edge_prob)?;
        let mut rng = seeded(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut edges: BTreeSet<(usize, usize)> = (0..n).map(|k| (perm[k], perm[(k + 1) % n])).collect();
        for i in 0..n {
            for j in 0..n {
                // one draw per ordered pair keeps the stream independent of the backbone
                let draw: f64 = rng.random();
                if i != j && draw < edge_prob {
                    edges.insert((i, j));
                }
            }
        }
        Self::new(n, edges)
    }

    /// Connected undirected graph: a random recursive spanning tree (each node in a
    /// shuffled order attaches to a uniformly chosen earlier node) plus every other
    /// unordered pair with probability `edge_prob`.
    pub fn random_connected_symmetric(n: usize, edge_prob: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("random graph needs n >= 2, got {n}")));
        }
        check_prob(edge_prob)?;
        let mut rng = seeded(seed);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let mut pairs = BTreeSet::new();
        for k in 1..n {
            let j = perm[rng.random_range(0..k)];
            pairs.insert((perm[k].min(j), perm[k].max(j)));
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let draw: f64 = rng.random();
                if draw < edge_prob {
                    pairs.insert((i, j));
                }
            }
        }
        Self::new(n, pairs.into_iter().flat_map(|(i, j)| [(i, j), (j, i)]))
    }

    /// Erdős–Rényi undirected graph conditioned on connectivity (rejection sampling).
    pub fn random_erdos_renyi_connected(n: usize, edge_prob: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidGraph(format!("random graph needs n >= 2, got {n}")));
        }
        check_prob(edge_prob)?;
        if edge_prob == 0.0 {
            return Err(Error::InvalidGraph("edge probability 0 never yields a connected graph".into()));
        }
        let mut rng = seeded(seed);
        loop {
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    let draw: f64 = rng.random();
                    if draw < edge_prob {
                        edges.push((i, j));
                        edges.push((j, i));
                    }
                }
            }
            let g = Self::new(n, edges)?;
            if g.is_strongly_connected() {
                return Ok(g);
            }
        }
    }

    pub fn is_strongly_connected(&self) -> bool {
        let mut dg = DiGraph::<(), ()>::with_capacity(self.n, self.edges.len());
        let nodes: Vec<_> = (0..self.n).map(|_| dg.add_node(())).collect();
        for &(i, j) in &self.edges {
            dg.add_edge(nodes[i], nodes[j], ());
        }
        kosaraju_scc(&dg).len() == 1
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges.iter().all(|&(i, j)| self.edges.contains(&(j, i)))
    }

    /// Whether every ordered pair of distinct nodes is an edge.
    pub fn is_complete(&self) -> bool {
        self.edges.len() == self.n * (self.n - 1)
    }

    /// Binary structure matrix: 1 on edges and on the whole diagonal.
    pub fn structure_matrix(&self) -> DMatrix<f64> {
        let mut b = DMatrix::identity(self.n, self.n);
        for &(i, j) in &self.edges {
            b[(i, j)] = 1.0;
        }
        b
    }

    /// Short content hash of the canonical JSON form.
    pub fn content_hash(&self) -> String {
        crate::rng::short_hash(serde_json::to_string(self).expect("graph serializes").as_bytes())
    }
}

fn check_prob(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidGraph(format!("edge probability {p} outside [0, 1]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn directed_ring3() -> DirectedGraph {
        DirectedGraph::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    #[test]
    fn strong_connectivity() {
        assert!(DirectedGraph::complete(4).unwrap().is_strongly_connected());
        assert!(directed_ring3().is_strongly_connected());
        assert!(!DirectedGraph::new(2, [(0, 1)]).unwrap().is_strongly_connected());
    }

    #[test]
    fn symmetry() {
        let ring = DirectedGraph::ring(5).unwrap();
        assert!(ring.is_symmetric());
        assert!(!directed_ring3().is_symmetric());
        assert!(DirectedGraph::new(1, []).unwrap().is_symmetric());
    }

    #[test]
    fn complete_graphs() {
        let g2 = DirectedGraph::complete(2).unwrap();
        assert_eq!(g2.edges().collect::<Vec<_>>(), vec![(0, 1), (1, 0)]);
        assert_eq!(DirectedGraph::complete(3).unwrap().edge_count(), 6);
        assert_eq!(DirectedGraph::complete(1).unwrap().edge_count(), 0);
    }

    #[test]
    fn rings() {
        let r5 = DirectedGraph::ring(5).unwrap();
        assert_eq!(r5.edge_count(), 10);
        assert!((0..5).all(|i| r5.neighbors(i).count() == 2));
        assert_eq!(DirectedGraph::ring(3).unwrap(), DirectedGraph::complete(3).unwrap());
        assert!(DirectedGraph::ring(2).is_err());
    }

    #[test]
    fn random_backbone_only_and_full() {
        let g = DirectedGraph::random_strongly_connected(4, 0.0, 7).unwrap();
        assert_eq!(g.edge_count(), 4);
        assert!(g.is_strongly_connected());
        assert!((0..4).all(|i| g.neighbors(i).count() == 1));
        let full = DirectedGraph::random_strongly_connected(4, 1.0, 7).unwrap();
        assert_eq!(full, DirectedGraph::complete(4).unwrap());
    }

    #[test]
    fn random_graph_is_seeded() {
        let a = DirectedGraph::random_strongly_connected(6, 0.3, 42).unwrap();
        let b = DirectedGraph::random_strongly_connected(6, 0.3, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.is_strongly_connected());
        assert!((6..=30).contains(&a.edge_count()));
    }

    #[test]
    fn random_symmetric_is_connected() {
        for seed in 0..50 {
            let g = DirectedGraph::random_connected_symmetric(5, 0.4, seed).unwrap();
            assert!(g.is_symmetric() && g.is_strongly_connected());
            let er = DirectedGraph::random_erdos_renyi_connected(5, 0.4, seed).unwrap();
            assert!(er.is_symmetric() && er.is_strongly_connected());
        }
        // tree backbone only
        let t = DirectedGraph::random_connected_symmetric(7, 0.0, 3).unwrap();
        assert_eq!(t.edge_count(), 2 * 6);
        assert!(DirectedGraph::random_erdos_renyi_connected(4, 0.0, 1).is_err());
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(DirectedGraph::new(3, [(0, 3)]).is_err());
        assert!(DirectedGraph::new(3, [(1, 1)]).is_err());
        assert!(DirectedGraph::new(0, []).is_err());
    }

    #[test]
    fn structure_matrix_has_unit_diagonal() {
        let b = DirectedGraph::new(2, [(0, 1)]).unwrap().structure_matrix();
        assert_eq!(b, DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]));
        let s = DirectedGraph::ring(6).unwrap().structure_matrix();
        assert_eq!(s, s.transpose());
    }

    #[test]
    fn json_is_one_based() {
        let g = DirectedGraph::new(2, [(0, 1)]).unwrap();
        let js = serde_json::to_string(&g).unwrap();
        assert_eq!(js, r#"{"n":2,"edges":[[1,2]]}"#);
        let back: DirectedGraph = serde_json::from_str(&js).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<DirectedGraph>(r#"{"n":2,"edges":[[0,1]]}"#).is_err());
    }
}
