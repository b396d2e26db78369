//! Graphlet orbit counts for connected induced subgraphs on 2 to 4 nodes.
//!
//! Orbits follow the usual numbering:
//! 0 edge; 1, 2 path end and middle; 3 triangle; 4, 5 four-path end and
//! inner; 6, 7 star leaf and centre; 8 four-cycle; 9, 10, 11 paw tail,
//! triangle side and hub; 12, 13 diamond rim and chord; 14 clique.

use crate::graph::Graph;

pub const ORBITS: usize = 15;

/// Orbit of each member of an induced subgraph given its internal degrees.
fn classify(degs: &[usize]) -> impl Fn(usize) -> usize + '_ {
    let edges: usize = degs.iter().sum::<usize>() / 2;
    let max = degs.iter().copied().max().unwrap_or(0);
    move |d: usize| match (degs.len(), edges) {
        (2, _) => 0,
        (3, 2) => {
            if d == 2 {
                2
            } else {
                1
            }
        }
        (3, _) => 3,
        (4, 3) if max == 2 => {
            if d == 1 {
                4
            } else {
                5
            }
        }
        (4, 3) => {
            if d == 1 {
                6
            } else {
                7
            }
        }
        (4, 4) if max == 2 => 8,
        (4, 4) => match d {
            1 => 9,
            2 => 10,
            _ => 11,
        },
        (4, 5) => {
            if d == 2 {
                12
            } else {
                13
            }
        }
        _ => 14,
    }
}

fn tally(g: &Graph, sub: &[usize], counts: &mut [[u64; ORBITS]]) {
    let degs: Vec<usize> = sub
        .iter()
        .map(|&a| sub.iter().filter(|&&b| g.has_edge(a, b)).count())
        .collect();
    let orbit = classify(&degs);
    for (&v, &d) in sub.iter().zip(&degs) {
        counts[v][orbit(d)] += 1;
    }
}

fn extend(g: &Graph, sub: &mut Vec<usize>, ext: Vec<usize>, root: usize, counts: &mut [[u64; ORBITS]]) {
    if sub.len() >= 2 {
        tally(g, sub, counts);
    }
    if sub.len() == 4 {
        return;
    }
    let mut ext = ext;
    while let Some(w) = ext.pop() {
        let mut next = ext.clone();
        for u in g.neighbors(w) {
            let exclusive = u > root
                && !sub.contains(&u)
                && u != w
                && !next.contains(&u)
                && !sub.iter().any(|&s| g.has_edge(s, u));
            if exclusive {
                next.push(u);
            }
        }
        sub.push(w);
        extend(g, sub, next, root, counts);
        sub.pop();
    }
}

/// Per-node orbit counts.
pub fn node_orbit_counts(g: &Graph) -> Vec<[u64; ORBITS]> {
    let n = g.n_nodes();
    let mut counts = vec![[0u64; ORBITS]; n];
    for v in 0..n {
        let ext: Vec<usize> = g.neighbors(v).filter(|&u| u > v).collect();
        extend(g, &mut vec![v], ext, v, &mut counts);
    }
    counts
}

/// Orbit counts averaged over nodes.
pub fn orbit_counts(g: &Graph) -> [f64; ORBITS] {
    let per_node = node_orbit_counts(g);
    let n = per_node.len().max(1) as f64;
    let mut out = [0.0; ORBITS];
    for row in &per_node {
        for (o, c) in out.iter_mut().zip(row) {
            *o += *c as f64;
        }
    }
    out.iter_mut().for_each(|o| *o /= n);
    out
}
