use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::Graph;
use crate::autograd::Matrix;
use crate::error::{Error, Result};

/// Column order used by every tabular output of structural metrics.
pub const PROFILE_COLUMNS: [&str; 10] = [
    "modularity",
    "density",
    "cycles4",
    "cycles5",
    "cycles6",
    "clustering",
    "diameter",
    "node_count",
    "triangle_count",
    "star_count",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructuralProfile {
    pub modularity: f64,
    pub density: f64,
    pub cycles4: u64,
    pub cycles5: u64,
    pub cycles6: u64,
    pub clustering: f64,
    pub diameter: usize,
    pub node_count: usize,
    pub triangle_count: u64,
    pub star_count: u64,
}

impl StructuralProfile {
    /// Values in [`PROFILE_COLUMNS`] order.
    pub fn to_vec(&self) -> [f64; 10] {
        [
            self.modularity,
            self.density,
            self.cycles4 as f64,
            self.cycles5 as f64,
            self.cycles6 as f64,
            self.clustering,
            self.diameter as f64,
            self.node_count as f64,
            self.triangle_count as f64,
            self.star_count as f64,
        ]
    }
}

pub fn structural_profile(g: &Graph) -> StructuralProfile {
    let n = g.n_nodes();
    let density = if n >= 2 {
        2.0 * g.edge_count() as f64 / (n * (n - 1)) as f64
    } else {
        0.0
    };
    StructuralProfile {
        modularity: greedy_modularity(g).1,
        density,
        cycles4: count_cycles(g, 4),
        cycles5: count_cycles(g, 5),
        cycles6: count_cycles(g, 6),
        clustering: average_clustering(g),
        diameter: diameter(g),
        node_count: n,
        triangle_count: count_cycles(g, 3),
        star_count: claw_count(g),
    }
}

/// Mean local clustering coefficient; nodes of degree < 2 contribute 0.
///
/// Local values are summed in sorted order so the result does not depend on
/// node labels.
pub fn average_clustering(g: &Graph) -> f64 {
    let mut local = local_clustering(g);
    local.sort_by(f64::total_cmp);
    local.iter().sum::<f64>() / g.n_nodes() as f64
}

/// Local clustering coefficient of every node.
pub fn local_clustering(g: &Graph) -> Vec<f64> {
    (0..g.n_nodes())
        .map(|v| {
            let nb: Vec<usize> = g.neighbors(v).collect();
            let d = nb.len();
            if d < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (a, &x) in nb.iter().enumerate() {
                for &y in &nb[a + 1..] {
                    if g.has_edge(x, y) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (d * (d - 1)) as f64
        })
        .collect()
}

/// Number of induced claws (`K_{1,3}`): a center with three pairwise
/// non-adjacent neighbors.
pub fn claw_count(g: &Graph) -> u64 {
    let mut count = 0;
    for v in 0..g.n_nodes() {
        let nb: Vec<usize> = g.neighbors(v).collect();
        for a in 0..nb.len() {
            for b in (a + 1)..nb.len() {
                if g.has_edge(nb[a], nb[b]) {
                    continue;
                }
                for c in (b + 1)..nb.len() {
                    if !g.has_edge(nb[a], nb[c]) && !g.has_edge(nb[b], nb[c]) {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// Number of simple cycles of exactly `k ≥ 3` nodes, each counted once.
///
/// Every cycle is rooted at its smallest node and traced in both directions,
/// so the raw walk count is halved.
pub fn count_cycles(g: &Graph, k: usize) -> u64 {
    assert!(k >= 3, "cycles need at least three nodes");
    let n = g.n_nodes();
    let nbrs: Vec<Vec<usize>> = (0..n).map(|v| g.neighbors(v).collect()).collect();
    let mut on_path = vec![false; n];
    let mut total = 0u64;

    fn extend(
        nbrs: &[Vec<usize>],
        root: usize,
        current: usize,
        depth: usize,
        k: usize,
        on_path: &mut [bool],
        total: &mut u64,
    ) {
        if depth == k {
            if nbrs[current].contains(&root) {
                *total += 1;
            }
            return;
        }
        for &next in &nbrs[current] {
            if next > root && !on_path[next] {
                on_path[next] = true;
                extend(nbrs, root, next, depth + 1, k, on_path, total);
                on_path[next] = false;
            }
        }
    }

    for root in 0..n {
        on_path[root] = true;
        extend(&nbrs, root, root, 1, k, &mut on_path, &mut total);
        on_path[root] = false;
    }
    total / 2
}

fn bfs_distances(g: &Graph, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.n_nodes()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].unwrap();
        for v in g.neighbors(u) {
            if dist[v].is_none() {
                dist[v] = Some(du + 1);
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Diameter of the largest connected component (ties: component holding the
/// smallest node index).
pub fn diameter(g: &Graph) -> usize {
    let comps = g.components();
    let largest = comps
        .iter()
        .max_by(|a, b| a.len().cmp(&b.len()).then(b[0].cmp(&a[0])))
        .expect("a graph has at least one component");
    largest
        .iter()
        .map(|&s| {
            bfs_distances(g, s)
                .into_iter()
                .flatten()
                .max()
                .unwrap_or(0)
        })
        .max()
        .unwrap_or(0)
}

/// Greedy agglomerative modularity maximization.
///
/// Starts from singletons and repeatedly merges the pair of edge-connected
/// communities with the largest modularity gain, stopping when no merge
/// improves modularity. Gains are compared as exact integers. Ties are broken
/// by a relabeling-invariant key built from color-refinement classes of the
/// member nodes, then by lowest community index. Returns the community of each
/// node and the final modularity.
pub fn greedy_modularity(g: &Graph) -> (Vec<usize>, f64) {
    let n = g.n_nodes();
    let m = g.edge_count() as i64;
    if m == 0 {
        return ((0..n).collect(), 0.0);
    }
    let colors = refinement_colors(g);
    // between[a][b]: edges joining communities a and b.
    let mut between = vec![vec![0i64; n]; n];
    for (i, j) in g.edges() {
        between[i][j] += 1;
        between[j][i] += 1;
    }
    let mut degree: Vec<i64> = g.degrees().into_iter().map(|d| d as i64).collect();
    let mut alive = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    let mut keys: Vec<Vec<u64>> = (0..n).map(|v| vec![colors[v]]).collect();

    loop {
        // Gain of merging a and b, scaled by 2m^2: 2m*l_ab - d_a*d_b.
        let mut best: Option<(i64, (Vec<u64>, Vec<u64>), usize, usize)> = None;
        for a in 0..n {
            if !alive[a] {
                continue;
            }
            for b in (a + 1)..n {
                if !alive[b] || between[a][b] == 0 {
                    continue;
                }
                let gain = 2 * m * between[a][b] - degree[a] * degree[b];
                if gain <= 0 {
                    continue;
                }
                let (lo, hi) = if keys[a] <= keys[b] { (a, b) } else { (b, a) };
                let better = match &best {
                    None => true,
                    Some((g0, (k0, k1), _, _)) => {
                        gain > *g0
                            || (gain == *g0 && (&keys[lo], &keys[hi]) < (k0, k1))
                    }
                };
                if better {
                    best = Some((gain, (keys[lo].clone(), keys[hi].clone()), a, b));
                }
            }
        }
        let Some((_, _, a, b)) = best else { break };
        degree[a] += degree[b];
        for c in 0..n {
            if c != a && c != b {
                between[a][c] += between[b][c];
                between[c][a] = between[a][c];
            }
            between[b][c] = 0;
            between[c][b] = 0;
        }
        between[a][b] = 0;
        between[b][a] = 0;
        alive[b] = false;
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        let moved_keys = std::mem::take(&mut keys[b]);
        keys[a].extend(moved_keys);
        keys[a].sort_unstable();
    }

    let mut membership = vec![0; n];
    for (c, nodes) in members.iter().enumerate() {
        for &v in nodes {
            membership[v] = c;
        }
    }
    let q = modularity(g, &membership);
    (membership, q)
}

/// Color refinement (1-dimensional Weisfeiler-Lehman) classes. Colors are
/// ranks of sorted signatures, so they do not depend on node labels.
pub fn refinement_colors(g: &Graph) -> Vec<u64> {
    let n = g.n_nodes();
    let mut colors: Vec<u64> = g.degrees().into_iter().map(|d| d as u64).collect();
    let mut distinct = 0;
    for _ in 0..n {
        let sigs: Vec<(u64, Vec<u64>)> = (0..n)
            .map(|v| {
                let mut nb: Vec<u64> = g.neighbors(v).map(|u| colors[u]).collect();
                nb.sort_unstable();
                (colors[v], nb)
            })
            .collect();
        let mut sorted = sigs.clone();
        sorted.sort();
        sorted.dedup();
        colors = sigs
            .iter()
            .map(|s| sorted.binary_search(s).unwrap() as u64)
            .collect();
        if sorted.len() == distinct {
            break;
        }
        distinct = sorted.len();
    }
    colors
}

/// Newman modularity of a node partition, evaluated from integer counts.
pub fn modularity(g: &Graph, membership: &[usize]) -> f64 {
    let m = g.edge_count() as i64;
    if m == 0 {
        return 0.0;
    }
    let n = g.n_nodes();
    let mut inside = 0i64;
    let mut deg = vec![0i64; n];
    for (i, j) in g.edges() {
        if membership[i] == membership[j] {
            inside += 1;
        }
    }
    for v in 0..n {
        deg[membership[v]] += g.degree(v) as i64;
    }
    let sq: i64 = deg.iter().map(|d| d * d).sum();
    // sum_c (L_c/m - (d_c/2m)^2) = (4m * sum L_c - sum d_c^2) / (4m^2)
    (4 * m * inside - sq) as f64 / (4 * m * m) as f64
}

/// Normalized degree histogram with `max_degree + 1` bins.
pub fn degree_histogram(g: &Graph, max_degree: usize) -> Result<Vec<f64>> {
    let mut hist = vec![0.0; max_degree + 1];
    for d in g.degrees() {
        if d > max_degree {
            return Err(Error::DegreeOverflow { degree: d, max_degree });
        }
        hist[d] += 1.0;
    }
    let n = g.n_nodes() as f64;
    hist.iter_mut().for_each(|h| *h /= n);
    Ok(hist)
}

/// Random-walk transition matrix and its powers `P^1 … P^steps`. Zero-degree
/// nodes carry a self-loop of probability one.
pub fn transition_probabilities(g: &Graph, steps: usize) -> Vec<Matrix> {
    assert!(steps >= 1, "steps must be at least 1");
    let n = g.n_nodes();
    let p = Matrix::from_fn(n, n, |i, j| {
        let d = g.degree(i);
        if d == 0 {
            if i == j {
                1.0
            } else {
                0.0
            }
        } else if g.has_edge(i, j) {
            1.0 / d as f64
        } else {
            0.0
        }
    });
    let mut powers = vec![p.clone()];
    for _ in 1..steps {
        let next = powers.last().unwrap().matmul(&p);
        powers.push(next);
    }
    powers
}
