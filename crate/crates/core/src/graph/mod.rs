//! Simple undirected graphs, canonical node ordering, and fixed-size padding.

mod stats;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::autograd::Matrix;
use crate::error::{Error, Result};

pub use stats::{
    average_clustering, count_cycles, degree_histogram, diameter, greedy_modularity,
    local_clustering, structural_profile, transition_probabilities, StructuralProfile,
    PROFILE_COLUMNS,
};

/// Undirected simple graph over `n` nodes stored as a dense boolean adjacency.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<bool>,
    pub label: Option<i64>,
    pub id: Option<String>,
}

impl Graph {
    /// Graph with `n ≥ 1` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        assert!(n >= 1, "a graph needs at least one node");
        Self {
            n,
            adj: vec![false; n * n],
            label: None,
            id: None,
        }
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidGraph("graph must have at least one node".into()));
        }
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidGraph(format!("edge ({i},{j}) out of range for n = {n}")));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            g.add_edge(i, j);
        }
        Ok(g)
    }

    /// Builds a graph from a square matrix, keeping off-diagonal entries `≥ threshold`.
    pub fn from_matrix(m: &Matrix, threshold: f64) -> Self {
        assert_eq!(m.rows(), m.cols(), "adjacency must be square");
        let n = m.rows().max(1);
        let mut g = Self::empty(n);
        for i in 0..m.rows() {
            for j in (i + 1)..m.rows() {
                if m.get(i, j) >= threshold {
                    g.add_edge(i, j);
                }
            }
        }
        g
    }

    pub fn with_label(mut self, label: Option<i64>) -> Self {
        self.label = label;
        self
    }

    pub fn n_nodes(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.n + j]
    }

    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i != j, "self-loops are not allowed");
        self.adj[i * self.n + j] = true;
        self.adj[j * self.n + i] = true;
    }

    pub fn remove_edge(&mut self, i: usize, j: usize) {
        self.adj[i * self.n + j] = false;
        self.adj[j * self.n + i] = false;
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.adj[i * self.n + j])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i * self.n..(i + 1) * self.n].iter().filter(|&&b| b).count()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().filter(|&&b| b).count() / 2
    }

    /// Edges as `(i, j)` with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                if self.has_edge(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn adjacency_matrix(&self) -> Matrix {
        Matrix::from_fn(self.n, self.n, |i, j| if self.has_edge(i, j) { 1.0 } else { 0.0 })
    }

    /// Relabels nodes so that old node `order[k]` becomes new node `k`.
    pub fn reorder(&self, order: &[usize]) -> Graph {
        assert_eq!(order.len(), self.n, "order must cover every node");
        let mut out = Graph::empty(self.n);
        for (a, &oa) in order.iter().enumerate() {
            for (b, &ob) in order.iter().enumerate().skip(a + 1) {
                if self.has_edge(oa, ob) {
                    out.add_edge(a, b);
                }
            }
        }
        out.label = self.label;
        out.id = self.id.clone();
        out
    }

    /// Connected components, each sorted ascending, ordered by smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.n];
        let mut comps = Vec::new();
        for s in 0..self.n {
            if seen[s] {
                continue;
            }
            let mut comp = vec![s];
            seen[s] = true;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for v in self.neighbors(u) {
                    if !seen[v] {
                        seen[v] = true;
                        comp.push(v);
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            comps.push(comp);
        }
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Induced subgraph on `nodes` (in the given order).
    pub fn induced(&self, nodes: &[usize]) -> Graph {
        let mut out = Graph::empty(nodes.len().max(1));
        for (a, &u) in nodes.iter().enumerate() {
            for (b, &v) in nodes.iter().enumerate().skip(a + 1) {
                if self.has_edge(u, v) {
                    out.add_edge(a, b);
                }
            }
        }
        out
    }
}

/// Canonical node order: breadth-first search starting from the highest-degree
/// node; neighbors are visited by descending degree, then ascending index.
/// Disconnected remainders restart from their own highest-degree node.
pub fn canonical_order(g: &Graph) -> Vec<usize> {
    let deg = g.degrees();
    let rank = |a: &usize, b: &usize| deg[*b].cmp(&deg[*a]).then(a.cmp(b));
    let mut by_rank: Vec<usize> = (0..g.n_nodes()).collect();
    by_rank.sort_by(rank);

    let mut seen = vec![false; g.n_nodes()];
    let mut order = Vec::with_capacity(g.n_nodes());
    for &root in &by_rank {
        if seen[root] {
            continue;
        }
        seen[root] = true;
        let mut queue = VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut next: Vec<usize> = g.neighbors(u).filter(|&v| !seen[v]).collect();
            next.sort_by(rank);
            for v in next {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    order
}

pub fn canonicalize(g: &Graph) -> Graph {
    g.reorder(&canonical_order(g))
}

/// Adjacency embedded in a fixed `n_max × n_max` frame with a node mask.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedGraph {
    pub adjacency: Matrix,
    pub node_mask: Vec<f64>,
    pub n_real: usize,
}

impl PaddedGraph {
    pub fn n_max(&self) -> usize {
        self.node_mask.len()
    }

    /// Mask as a `1 × n_max` row.
    pub fn mask_row(&self) -> Matrix {
        Matrix::row_vector(self.node_mask.clone())
    }

    /// Outer product of the node mask with itself.
    pub fn pair_mask(&self) -> Matrix {
        let n = self.n_max();
        Matrix::from_fn(n, n, |i, j| self.node_mask[i] * self.node_mask[j])
    }

    /// Applies the same node permutation to adjacency and mask.
    pub fn permuted(&self, order: &[usize]) -> PaddedGraph {
        let n = self.n_max();
        assert_eq!(order.len(), n);
        PaddedGraph {
            adjacency: Matrix::from_fn(n, n, |i, j| self.adjacency.get(order[i], order[j])),
            node_mask: order.iter().map(|&i| self.node_mask[i]).collect(),
            n_real: self.n_real,
        }
    }
}

pub fn pad(g: &Graph, n_max: usize) -> Result<PaddedGraph> {
    let n = g.n_nodes();
    if n > n_max {
        return Err(Error::OversizeGraph { n, n_max });
    }
    let adjacency = Matrix::from_fn(n_max, n_max, |i, j| {
        if i < n && j < n && g.has_edge(i, j) {
            1.0
        } else {
            0.0
        }
    });
    let node_mask = (0..n_max).map(|i| if i < n { 1.0 } else { 0.0 }).collect();
    Ok(PaddedGraph {
        adjacency,
        node_mask,
        n_real: n,
    })
}

/// Recovers a discrete graph from a padded binary adjacency by dropping every
/// zero-degree node. Isolated real nodes cannot be told apart from padding, so
/// they are dropped too; an edgeless input becomes a single-node graph.
pub fn trim_isolated(pg: &PaddedGraph) -> Graph {
    let full = Graph::from_matrix(&pg.adjacency, 0.5);
    let keep: Vec<usize> = (0..full.n_nodes()).filter(|&i| full.degree(i) > 0).collect();
    if keep.is_empty() {
        return Graph::empty(1);
    }
    full.induced(&keep)
}

#[derive(Serialize, Deserialize)]
struct GraphRecord {
    n: usize,
    edges: Vec<[usize; 2]>,
    #[serde(default)]
    label: Option<i64>,
    #[serde(default)]
    id: Option<String>,
}

impl Serialize for Graph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GraphRecord {
            n: self.n,
            edges: self.edges().into_iter().map(|(i, j)| [i, j]).collect(),
            label: self.label,
            id: self.id.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Graph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = GraphRecord::deserialize(d)?;
        let edges: Vec<(usize, usize)> = rec.edges.iter().map(|e| (e[0], e[1])).collect();
        let mut g = Graph::from_edges(rec.n, &edges).map_err(serde::de::Error::custom)?;
        g.label = rec.label;
        g.id = rec.id;
        Ok(g)
    }
}
