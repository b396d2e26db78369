//! Composition of soft substructures into a soft graph adjacency.

use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Tolerance for row-stochastic checks on mappings.
pub const ROW_SUM_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    /// Each mapping sees the graph built so far.
    #[default]
    Sequential,
    /// Every mapping sees the empty graph; contributions are combined once.
    Parallel,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnionRule {
    /// `min(1, a + b)`.
    #[default]
    Clamp,
    /// `1 - (1 - a)(1 - b)`.
    SoftOr,
}

impl UnionRule {
    fn combine(self, a: f64, b: f64) -> f64 {
        match self {
            UnionRule::Clamp => (a + b).min(1.0),
            UnionRule::SoftOr => 1.0 - (1.0 - a) * (1.0 - b),
        }
    }

    /// Tape version of [`UnionRule::combine`].
    pub fn combine_var<'t>(self, a: Var<'t>, b: Var<'t>) -> Var<'t> {
        match self {
            UnionRule::Clamp => a.add(b).clamp(f64::NEG_INFINITY, 1.0),
            UnionRule::SoftOr => a.add(b).sub(a.mul(b)),
        }
    }
}

/// `mᵀ A_s m` with the diagonal cleared.
///
/// Computed on the tape with the same operation order, so both paths agree
/// bit for bit.
pub fn embed(substructure: &Matrix, mapping: &Matrix) -> Result<Matrix> {
    let n_sub = substructure.rows();
    if substructure.cols() != n_sub || mapping.rows() != n_sub {
        return Err(Error::ShapeMismatch(format!(
            "substructure {:?} with mapping {:?}",
            substructure.shape(),
            mapping.shape()
        )));
    }
    // Symmetrized explicitly so the result is bit-exactly symmetric.
    let raw = mapping.transpose().matmul(substructure).matmul(mapping);
    let sym = raw.add(&raw.transpose()).scale(0.5);
    Ok(sym.hadamard(&Matrix::off_diagonal_ones(sym.rows())))
}

/// Tape version of [`embed`]; `off_diagonal` is the `N_max × N_max` mask.
pub fn embed_var<'t>(substructure: Var<'t>, mapping: Var<'t>, off_diagonal: Var<'t>) -> Var<'t> {
    let raw = mapping.t().matmul(substructure).matmul(mapping);
    raw.add(raw.t()).scale(0.5).mul(off_diagonal)
}

pub fn assemble_step(prev: &Matrix, substructure: &Matrix, mapping: &Matrix) -> Result<Matrix> {
    assemble_step_with(prev, substructure, mapping, UnionRule::Clamp)
}

pub fn assemble_step_with(
    prev: &Matrix,
    substructure: &Matrix,
    mapping: &Matrix,
    rule: UnionRule,
) -> Result<Matrix> {
    if prev.rows() != prev.cols() || mapping.cols() != prev.rows() {
        return Err(Error::ShapeMismatch(format!(
            "graph {:?} with mapping {:?}",
            prev.shape(),
            mapping.shape()
        )));
    }
    let added = embed(substructure, mapping)?;
    let mut out = prev.zip_map(&added, |a, b| rule.combine(a, b));
    for i in 0..out.rows() {
        out.set(i, i, 0.0);
    }
    Ok(out)
}

/// Folds all steps from the empty graph. Returns the final soft adjacency and
/// the adjacency after each step.
pub fn run_assembly(
    substructures: &[Matrix],
    mappings: &[Matrix],
    mode: AssemblyMode,
    rule: UnionRule,
) -> Result<(Matrix, Vec<Matrix>)> {
    if substructures.is_empty() {
        return Err(Error::EmptySequence);
    }
    if substructures.len() != mappings.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} substructures but {} mappings",
            substructures.len(),
            mappings.len()
        )));
    }
    let n = mappings[0].cols();
    let mut graph = Matrix::zeros(n, n);
    let mut after = Vec::with_capacity(substructures.len());
    match mode {
        AssemblyMode::Sequential => {
            for (s, m) in substructures.iter().zip(mappings) {
                graph = assemble_step_with(&graph, s, m, rule)?;
                after.push(graph.clone());
            }
        }
        AssemblyMode::Parallel => {
            // Contributions accumulate unclamped; the union rule applies once
            // against the empty starting graph.
            let mut total = Matrix::zeros(n, n);
            for (s, m) in substructures.iter().zip(mappings) {
                let added = embed(s, m)?;
                if added.shape() != total.shape() {
                    return Err(Error::ShapeMismatch("mapping widths differ".into()));
                }
                total = match rule {
                    UnionRule::Clamp => total.add(&added),
                    UnionRule::SoftOr => total.zip_map(&added, |a, b| rule.combine(a, b)),
                };
                after.push(total.map(|v| v.min(1.0)));
            }
            graph = after.last().cloned().expect("non-empty");
        }
    }
    Ok((graph, after))
}

/// Thresholds a soft adjacency (`≥ threshold` is an edge) and drops isolated
/// slots. An all-isolated result is the single-node graph.
pub fn discretize(soft: &Matrix, threshold: f64) -> Graph {
    let full = Graph::from_matrix(soft, threshold);
    let keep: Vec<usize> = (0..full.n_nodes()).filter(|&i| full.degree(i) > 0).collect();
    if keep.is_empty() {
        return Graph::empty(1);
    }
    full.induced(&keep)
}

pub fn is_row_stochastic(m: &Matrix) -> bool {
    (0..m.rows()).all(|i| {
        let row = m.row(i);
        row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= ROW_SUM_TOL
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssemblyStep {
    pub index: usize,
    pub topic: usize,
    pub substructure: Matrix,
    pub mapping: Matrix,
    pub graph_after: Matrix,
}

/// Ordered record of one generated graph.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationTrace {
    pub theta: Vec<f64>,
    pub z_g: Vec<f64>,
    pub steps: Vec<AssemblyStep>,
    pub final_soft: Matrix,
    pub final_graph: Graph,
}

impl GenerationTrace {
    /// Re-runs the recorded substructures and mappings.
    pub fn replay(&self, mode: AssemblyMode, rule: UnionRule) -> Result<Matrix> {
        let subs: Vec<Matrix> = self.steps.iter().map(|s| s.substructure.clone()).collect();
        let maps: Vec<Matrix> = self.steps.iter().map(|s| s.mapping.clone()).collect();
        Ok(run_assembly(&subs, &maps, mode, rule)?.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&TraceRecord::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<TraceRecord>(s)?.try_into()
    }
}

impl Serialize for GenerationTrace {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TraceRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for GenerationTrace {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        TraceRecord::deserialize(d)?
            .try_into()
            .map_err(serde::de::Error::custom)
    }
}

/// Symmetric soft edge `(i, j, value)` with `i < j`.
type SoftEdge = (usize, usize, f64);

#[derive(Serialize, Deserialize)]
struct StepRecord {
    w: usize,
    topic: usize,
    n_sub: usize,
    substructure: Vec<SoftEdge>,
    mapping: Vec<Vec<f64>>,
    graph_after: Vec<SoftEdge>,
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    theta: Vec<f64>,
    z_g: Vec<f64>,
    n_max: usize,
    steps: Vec<StepRecord>,
    final_graph: Graph,
}

fn soft_edges(m: &Matrix) -> Vec<SoftEdge> {
    let mut out = Vec::new();
    for i in 0..m.rows() {
        for j in (i + 1)..m.cols() {
            let v = m.get(i, j);
            if v != 0.0 {
                out.push((i, j, v));
            }
        }
    }
    out
}

fn from_soft_edges(n: usize, edges: &[SoftEdge]) -> Result<Matrix> {
    let mut m = Matrix::zeros(n, n);
    for &(i, j, v) in edges {
        if i >= n || j >= n || i == j {
            return Err(Error::ShapeMismatch(format!("soft edge ({i}, {j}) outside {n} nodes")));
        }
        m.set(i, j, v);
        m.set(j, i, v);
    }
    Ok(m)
}

impl From<&GenerationTrace> for TraceRecord {
    fn from(t: &GenerationTrace) -> Self {
        Self {
            theta: t.theta.clone(),
            z_g: t.z_g.clone(),
            n_max: t.final_soft.rows(),
            steps: t
                .steps
                .iter()
                .map(|s| StepRecord {
                    w: s.index,
                    topic: s.topic,
                    n_sub: s.substructure.rows(),
                    substructure: soft_edges(&s.substructure),
                    mapping: s.mapping.to_rows(),
                    graph_after: soft_edges(&s.graph_after),
                })
                .collect(),
            final_graph: t.final_graph.clone(),
        }
    }
}

impl TryFrom<TraceRecord> for GenerationTrace {
    type Error = Error;

    fn try_from(r: TraceRecord) -> Result<Self> {
        let mut steps = Vec::with_capacity(r.steps.len());
        for s in r.steps {
            let rows = s.mapping.len();
            if rows != s.n_sub || s.mapping.iter().any(|row| row.len() != r.n_max) {
                return Err(Error::ShapeMismatch("trace mapping dimensions".into()));
            }
            steps.push(AssemblyStep {
                index: s.w,
                topic: s.topic,
                substructure: from_soft_edges(s.n_sub, &s.substructure)?,
                mapping: Matrix::from_vec(rows, r.n_max, s.mapping.into_iter().flatten().collect()),
                graph_after: from_soft_edges(r.n_max, &s.graph_after)?,
            });
        }
        let final_soft = steps
            .last()
            .map(|s| s.graph_after.clone())
            .ok_or(Error::EmptySequence)?;
        Ok(Self {
            theta: r.theta,
            z_g: r.z_g,
            steps,
            final_soft,
            final_graph: r.final_graph,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn edge2() -> Matrix {
        Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0])
    }

    /// Hard mapping sending substructure node `i` to `slots[i]`.
    fn hard(slots: &[usize], n_max: usize) -> Matrix {
        Matrix::from_fn(slots.len(), n_max, |i, j| f64::from(slots[i] == j))
    }

    #[test]
    fn hard_embedding_places_edge() {
        let out = assemble_step(&Matrix::zeros(3, 3), &edge2(), &hard(&[0, 2], 3)).unwrap();
        let expected = Matrix::from_vec(3, 3, vec![0., 0., 1., 0., 0., 0., 1., 0., 0.]);
        assert_eq!(out, expected);
    }

    #[test]
    fn existing_edge_is_clamped() {
        let prev = Matrix::from_vec(3, 3, vec![0., 0., 1., 0., 0., 0., 1., 0., 0.]);
        let out = assemble_step(&prev, &edge2(), &hard(&[0, 2], 3)).unwrap();
        assert_eq!(out, prev);
    }

    #[test]
    fn uniform_mapping_spreads_half() {
        let m = Matrix::filled(2, 2, 0.5);
        let out = assemble_step(&Matrix::zeros(2, 2), &edge2(), &m).unwrap();
        assert_eq!(out, Matrix::from_vec(2, 2, vec![0.0, 0.5, 0.5, 0.0]));
    }

    #[test]
    fn soft_or_union() {
        let prev = Matrix::from_vec(2, 2, vec![0.0, 0.5, 0.5, 0.0]);
        let m = Matrix::filled(2, 2, 0.5);
        let out = assemble_step_with(&prev, &edge2(), &m, UnionRule::SoftOr).unwrap();
        assert_eq!(out.get(0, 1), 0.75);
        assert_eq!(out.get(1, 0), 0.75);
    }

    #[test]
    fn shape_errors() {
        let err = assemble_step(&Matrix::zeros(3, 3), &edge2(), &hard(&[0, 1], 4));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
        let err = assemble_step(&Matrix::zeros(3, 3), &edge2(), &hard(&[0, 1, 2], 3));
        assert!(matches!(err, Err(Error::ShapeMismatch(_))));
        assert!(matches!(
            run_assembly(&[], &[], AssemblyMode::Sequential, UnionRule::Clamp),
            Err(Error::EmptySequence)
        ));
    }

    #[test]
    fn single_step_modes_agree() {
        let s = [edge2()];
        let m = [Matrix::from_vec(2, 3, vec![0.2, 0.3, 0.5, 0.6, 0.1, 0.3])];
        let (a, _) = run_assembly(&s, &m, AssemblyMode::Sequential, UnionRule::Clamp).unwrap();
        let (b, _) = run_assembly(&s, &m, AssemblyMode::Parallel, UnionRule::Clamp).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn disjoint_and_overlapping_edges() {
        let s = [edge2(), edge2()];
        let disjoint = [hard(&[0, 1], 4), hard(&[2, 3], 4)];
        let overlap = [hard(&[0, 1], 4), hard(&[1, 0], 4)];
        for mode in [AssemblyMode::Sequential, AssemblyMode::Parallel] {
            let (a, steps) = run_assembly(&s, &disjoint, mode, UnionRule::Clamp).unwrap();
            assert_eq!(steps.len(), 2);
            assert_eq!(soft_edges(&a), vec![(0, 1, 1.0), (2, 3, 1.0)]);
            let (b, _) = run_assembly(&s, &overlap, mode, UnionRule::Clamp).unwrap();
            assert_eq!(soft_edges(&b), vec![(0, 1, 1.0)]);
        }
    }

    #[test]
    fn discretize_examples() {
        let mut soft = Matrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 0.6 });
        let k3 = discretize(&soft, 0.5);
        assert_eq!(k3.edges(), vec![(0, 1), (0, 2), (1, 2)]);
        soft.set(0, 1, 0.5);
        soft.set(1, 0, 0.5);
        assert!(discretize(&soft, 0.5).has_edge(0, 1));

        let mut soft = Matrix::zeros(3, 3);
        for (i, j, v) in [(0, 1, 0.8), (1, 2, 0.45)] {
            soft.set(i, j, v);
            soft.set(j, i, v);
        }
        let g = discretize(&soft, 0.5);
        assert_eq!((g.n_nodes(), g.edges()), (2, vec![(0, 1)]));
        assert_eq!(discretize(&Matrix::zeros(4, 4), 0.5).n_nodes(), 1);
    }

    #[test]
    fn trace_json_round_trip_is_exact() {
        let subs = [
            Matrix::from_vec(2, 2, vec![0.0, 0.123456789, 0.123456789, 0.0]),
            Matrix::from_vec(2, 2, vec![0.0, 0.9, 0.9, 0.0]),
        ];
        let maps = [
            Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.7, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]),
            hard(&[0, 1], 3),
        ];
        let (final_soft, after) = run_assembly(&subs, &maps, AssemblyMode::Sequential, UnionRule::Clamp).unwrap();
        let trace = GenerationTrace {
            theta: vec![0.25, 0.75],
            z_g: vec![0.5, -0.1],
            steps: (0..2)
                .map(|w| AssemblyStep {
                    index: w,
                    topic: w,
                    substructure: subs[w].clone(),
                    mapping: maps[w].clone(),
                    graph_after: after[w].clone(),
                })
                .collect(),
            final_graph: discretize(&final_soft, 0.5),
            final_soft,
        };
        let json = trace.to_json().unwrap();
        let back = GenerationTrace::from_json(&json).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.replay(AssemblyMode::Sequential, UnionRule::Clamp).unwrap(), trace.final_soft);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;
        use std::collections::BTreeSet;

        fn symmetric(n: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(0.0f64..=1.0, n * n).prop_map(move |d| {
                Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
                    std::cmp::Ordering::Equal => 0.0,
                    std::cmp::Ordering::Less => d[i * n + j],
                    std::cmp::Ordering::Greater => d[j * n + i],
                })
            })
        }

        fn stochastic(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
            proptest::collection::vec(0.01f64..1.0, rows * cols).prop_map(move |d| {
                let m = Matrix::from_vec(rows, cols, d);
                Matrix::from_fn(rows, cols, |i, j| m.get(i, j) / m.row(i).iter().sum::<f64>())
            })
        }

        /// Substructures of at most four nodes, each an edge set, placed on
        /// slots of a seven-slot graph.
        fn hard_instance() -> impl Strategy<Value = Vec<(usize, Vec<(usize, usize)>, Vec<usize>)>> {
            let one = (2usize..=4).prop_flat_map(|n| {
                let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
                (
                    Just(n),
                    proptest::sample::subsequence(pairs.clone(), 0..=pairs.len()),
                    proptest::sample::subsequence((0..7).collect::<Vec<_>>(), n).prop_shuffle(),
                )
            });
            proptest::collection::vec(one, 1..=5)
        }

        proptest! {
            #[test]
            fn step_output_is_valid(prev in symmetric(5), s in symmetric(3), m in stochastic(3, 5), soft_or in any::<bool>()) {
                let rule = if soft_or { UnionRule::SoftOr } else { UnionRule::Clamp };
                let out = assemble_step_with(&prev, &s, &m, rule).unwrap();
                for i in 0..5 {
                    prop_assert_eq!(out.get(i, i), 0.0);
                    for j in 0..5 {
                        prop_assert!((out.get(i, j) - out.get(j, i)).abs() <= 1e-12);
                        prop_assert!((0.0..=1.0).contains(&out.get(i, j)));
                    }
                }
            }

            #[test]
            fn hard_assembly_is_edge_union(instance in hard_instance(), parallel in any::<bool>()) {
                let mode = if parallel { AssemblyMode::Parallel } else { AssemblyMode::Sequential };
                let mut subs = Vec::new();
                let mut maps = Vec::new();
                let mut oracle = BTreeSet::new();
                for (n, edges, slots) in &instance {
                    let mut s = Matrix::zeros(*n, *n);
                    for &(i, j) in edges {
                        s.set(i, j, 1.0);
                        s.set(j, i, 1.0);
                        let (a, b) = (slots[i].min(slots[j]), slots[i].max(slots[j]));
                        oracle.insert((a, b));
                    }
                    subs.push(s);
                    maps.push(hard(slots, 7));
                }
                let (soft, _) = run_assembly(&subs, &maps, mode, UnionRule::Clamp).unwrap();
                let got: BTreeSet<(usize, usize)> = soft_edges(&soft).into_iter().map(|(i, j, _)| (i, j)).collect();
                prop_assert_eq!(&got, &oracle);
                let g = discretize(&soft, 0.5);
                prop_assert_eq!(g.edge_count(), oracle.len());
            }

            #[test]
            fn disjoint_hard_assembly_is_order_independent(
                instance in hard_instance(),
                seed in any::<u64>(),
            ) {
                // Keep only substructures whose slots don't collide with earlier ones.
                let mut used = BTreeSet::new();
                let mut subs = Vec::new();
                let mut maps = Vec::new();
                for (n, edges, slots) in &instance {
                    if slots.iter().any(|s| used.contains(s)) {
                        continue;
                    }
                    used.extend(slots.iter().copied());
                    let mut s = Matrix::zeros(*n, *n);
                    for &(i, j) in edges {
                        s.set(i, j, 1.0);
                        s.set(j, i, 1.0);
                    }
                    subs.push(s);
                    maps.push(hard(slots, 7));
                }
                let (a, _) = run_assembly(&subs, &maps, AssemblyMode::Sequential, UnionRule::Clamp).unwrap();
                let mut order: Vec<usize> = (0..subs.len()).collect();
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
                let subs2: Vec<Matrix> = order.iter().map(|&i| subs[i].clone()).collect();
                let maps2: Vec<Matrix> = order.iter().map(|&i| maps[i].clone()).collect();
                let (b, _) = run_assembly(&subs2, &maps2, AssemblyMode::Sequential, UnionRule::Clamp).unwrap();
                prop_assert_eq!(a, b);
            }
        }
    }
}
