//! Evaluation: statistic MMDs, random-GNN embedding metrics, effect sizes and
//! the classifier probe.

mod orbits;
mod probe;

pub use orbits::{node_orbit_counts, orbit_counts, ORBITS};
pub use probe::{ClassifierProbe, ProbeConfig};

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::graph::{diameter, local_clustering, structural_profile, Graph, PROFILE_COLUMNS};

pub const CLUSTERING_BINS: usize = 100;
pub const SPECTRAL_BINS: usize = 200;
pub const EMBED_DIM: usize = 128;
pub const GIN_LAYERS: usize = 3;
pub const DEFAULT_K: usize = 5;
/// Significance level for effect-size rows.
pub const ALPHA: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    Degree,
    Clustering,
    Orbit,
    Spectral,
    Diameter,
}

impl StatKind {
    pub const ALL: [StatKind; 5] = [
        StatKind::Degree,
        StatKind::Clustering,
        StatKind::Orbit,
        StatKind::Spectral,
        StatKind::Diameter,
    ];
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureDistance {
    TotalVariation,
    Euclidean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise feature distance over the pooled set.
    Median,
}

/// Kernel used for one statistic.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatKernel {
    pub distance: FeatureDistance,
    pub bandwidth: Bandwidth,
}

impl StatKernel {
    /// Fixed bandwidths of the common graph-generation benchmark protocol;
    /// the diameter scalar has no established value and uses the median.
    pub fn standard(kind: StatKind) -> Self {
        let (distance, bandwidth) = match kind {
            StatKind::Degree => (FeatureDistance::TotalVariation, Bandwidth::Fixed(1.0)),
            StatKind::Clustering => (FeatureDistance::TotalVariation, Bandwidth::Fixed(0.1)),
            StatKind::Spectral => (FeatureDistance::TotalVariation, Bandwidth::Fixed(1.0)),
            StatKind::Orbit => (FeatureDistance::Euclidean, Bandwidth::Fixed(30.0)),
            StatKind::Diameter => (FeatureDistance::Euclidean, Bandwidth::Median),
        };
        Self { distance, bandwidth }
    }

    pub fn median(kind: StatKind) -> Self {
        Self {
            bandwidth: Bandwidth::Median,
            ..Self::standard(kind)
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
    v
}

fn histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for &v in values {
        let idx = (((v - lo) / (hi - lo)) * bins as f64).floor();
        h[(idx.max(0.0) as usize).min(bins - 1)] += 1.0;
    }
    normalize(h)
}

/// Eigenvalues of the symmetric normalized Laplacian; isolated nodes
/// contribute zero.
pub fn laplacian_spectrum(g: &Graph) -> Vec<f64> {
    let n = g.n_nodes();
    let deg: Vec<f64> = g.degrees().iter().map(|&d| d as f64).collect();
    let l = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            if deg[i] > 0.0 {
                1.0
            } else {
                0.0
            }
        } else if g.has_edge(i, j) {
            -1.0 / (deg[i] * deg[j]).sqrt()
        } else {
            0.0
        }
    });
    let mut ev: Vec<f64> = SymmetricEigen::new(l).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Normalized histogram of the Laplacian spectrum over `[0, 2]`.
pub fn spectral_features(g: &Graph, bins: usize) -> Vec<f64> {
    histogram(&laplacian_spectrum(g), bins, 0.0, 2.0)
}

/// Per-graph feature vector for a statistic. Degree histograms are padded to
/// a common length by [`stat_mmd`].
pub fn stat_features(kind: StatKind, g: &Graph) -> Vec<f64> {
    match kind {
        StatKind::Degree => {
            let degs = g.degrees();
            let mut h = vec![0.0; degs.iter().copied().max().unwrap_or(0) + 1];
            for d in degs {
                h[d] += 1.0;
            }
            normalize(h)
        }
        StatKind::Clustering => histogram(&local_clustering(g), CLUSTERING_BINS, 0.0, 1.0),
        StatKind::Orbit => orbit_counts(g).to_vec(),
        StatKind::Spectral => spectral_features(g, SPECTRAL_BINS),
        StatKind::Diameter => vec![diameter(g) as f64],
    }
}

fn distance(kind: FeatureDistance, a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().max(b.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    match kind {
        FeatureDistance::TotalVariation => 0.5 * (0..len).map(|i| (at(a, i) - at(b, i)).abs()).sum::<f64>(),
        FeatureDistance::Euclidean => (0..len).map(|i| (at(a, i) - at(b, i)).powi(2)).sum::<f64>().sqrt(),
    }
}

/// Sum in sorted order so the result does not depend on argument order.
fn stable_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Biased squared MMD under a Gaussian kernel on a feature distance.
pub fn mmd_with(x: &[Vec<f64>], y: &[Vec<f64>], dist: FeatureDistance, bandwidth: Bandwidth) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptySet);
    }
    let sigma = match bandwidth {
        Bandwidth::Fixed(s) => s,
        Bandwidth::Median => {
            let pooled: Vec<&Vec<f64>> = x.iter().chain(y).collect();
            let mut d = Vec::new();
            for i in 0..pooled.len() {
                for j in (i + 1)..pooled.len() {
                    d.push(distance(dist, pooled[i], pooled[j]));
                }
            }
            median(d)
        }
    };
    let kernel = |a: &[f64], b: &[f64]| {
        let d = distance(dist, a, b);
        if sigma > 0.0 {
            (-d * d / (2.0 * sigma * sigma)).exp()
        } else {
            f64::from(d == 0.0)
        }
    };
    let mean_kernel = |a: &[Vec<f64>], b: &[Vec<f64>]| {
        let vals: Vec<f64> = a.iter().flat_map(|u| b.iter().map(move |v| kernel(u, v))).collect();
        stable_sum(vals) / (a.len() * b.len()) as f64
    };
    let within = mean_kernel(x, x) + mean_kernel(y, y);
    Ok((within - 2.0 * mean_kernel(x, y)).max(0.0))
}

pub fn stat_mmd(kind: StatKind, reference: &[Graph], generated: &[Graph]) -> Result<f64> {
    stat_mmd_with(kind, reference, generated, StatKernel::standard(kind))
}

pub fn stat_mmd_with(kind: StatKind, reference: &[Graph], generated: &[Graph], kernel: StatKernel) -> Result<f64> {
    let x: Vec<Vec<f64>> = reference.iter().map(|g| stat_features(kind, g)).collect();
    let y: Vec<Vec<f64>> = generated.iter().map(|g| stat_features(kind, g)).collect();
    mmd_with(&x, &y, kernel.distance, kernel.bandwidth)
}

/// Untrained GIN with sum aggregation and sum pooling.
#[derive(Clone, Debug)]
pub struct RandomGin {
    layers: Vec<(DMatrix<f64>, Vec<f64>)>,
    dim: usize,
}

impl RandomGin {
    pub fn new(seed: u64, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = 1;
        let layers = (0..GIN_LAYERS)
            .map(|_| {
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive scale");
                let w = DMatrix::from_fn(fan_in, dim, |_, _| normal.sample(&mut rng));
                let b = (0..dim).map(|_| normal.sample(&mut rng) * 0.1).collect();
                fan_in = dim;
                (w, b)
            })
            .collect();
        Self { layers, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, g: &Graph) -> Vec<f64> {
        let n = g.n_nodes();
        let mut h = DMatrix::from_element(n, 1, 1.0);
        for (w, b) in &self.layers {
            // (A + I) H: each node sums itself and its neighbours.
            let mut agg = h.clone();
            for i in 0..n {
                for j in g.neighbors(i) {
                    for c in 0..h.ncols() {
                        agg[(i, c)] += h[(j, c)];
                    }
                }
            }
            let mut next = agg * w;
            for i in 0..n {
                for c in 0..self.dim {
                    next[(i, c)] = (next[(i, c)] + b[c]).max(0.0);
                }
            }
            h = next;
        }
        (0..self.dim).map(|c| h.column(c).iter().sum()).collect()
    }
}

pub fn random_gnn_embed(g: &Graph, seed: u64) -> Vec<f64> {
    RandomGin::new(seed, EMBED_DIM).embed(g)
}

/// Squared MMD with an RBF kernel, bandwidth from the median heuristic.
pub fn mmd_rbf(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<f64> {
    if x.iter().chain(y).any(|v| v.len() != x.first().map_or(0, Vec::len)) {
        return Err(Error::ShapeMismatch("embedding dimensions differ".into()));
    }
    mmd_with(x, y, FeatureDistance::Euclidean, Bandwidth::Median)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Distance from each point to its k-th nearest other point.
fn knn_radii(points: &[Vec<f64>], k: usize) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, q)| euclid(p, q))
                .collect();
            d.sort_by(f64::total_cmp);
            d[k - 1]
        })
        .collect()
}

/// Fraction of `queries` inside the k-NN ball of some manifold point.
fn coverage(manifold: &[Vec<f64>], radii: &[f64], queries: &[Vec<f64>]) -> f64 {
    let hits = queries
        .iter()
        .filter(|q| manifold.iter().zip(radii).any(|(m, r)| euclid(q, m) <= *r))
        .count();
    hits as f64 / queries.len() as f64
}

/// Precision and recall from k-NN manifold estimates.
pub fn precision_recall(reference: &[Vec<f64>], generated: &[Vec<f64>], k: usize) -> Result<(f64, f64)> {
    let smallest = reference.len().min(generated.len());
    if k == 0 || smallest <= k {
        return Err(Error::TooFewSamples { k, got: smallest });
    }
    let precision = coverage(reference, &knn_radii(reference, k), generated);
    let recall = coverage(generated, &knn_radii(generated, k), reference);
    Ok((precision, recall))
}

/// Harmonic mean of precision and recall, on a 0 to 100 scale.
pub fn f1_pr(reference: &[Vec<f64>], generated: &[Vec<f64>], k: usize) -> Result<f64> {
    let (p, r) = precision_recall(reference, generated, k)?;
    Ok(if p + r > 0.0 { 200.0 * p * r / (p + r) } else { 0.0 })
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Cohen's d of `a` against `b` with the pooled standard deviation, and the
/// two-sided Welch t-test p-value.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    let got = a.len().min(b.len());
    if got < 2 {
        return Err(Error::TooFewSamples { k: 1, got });
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    if va == 0.0 && vb == 0.0 {
        return if ma == mb { Ok((0.0, 1.0)) } else { Err(Error::DegenerateVariance) };
    }
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    let d = (ma - mb) / pooled;
    let se2 = va / na + vb / nb;
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::NonFinite(e.to_string()))?;
    let p = (2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0);
    Ok((d, p))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
        let mut r = vec![0.0; v.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
    if sx == 0.0 || sy == 0.0 {
        0.0
    } else {
        cov / (sx * sy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeRow {
    pub metric: String,
    /// `None` when both classes are constant and different.
    pub cohens_d: Option<f64>,
    pub p_value: Option<f64>,
    pub significant: bool,
}

/// Structural-profile effect sizes of `class1` against `class0`.
pub fn effect_size_table(class0: &[Graph], class1: &[Graph]) -> Result<Vec<EffectSizeRow>> {
    if class0.is_empty() || class1.is_empty() {
        return Err(Error::EmptySet);
    }
    let p0: Vec<[f64; 10]> = class0.iter().map(|g| structural_profile(g).to_vec()).collect();
    let p1: Vec<[f64; 10]> = class1.iter().map(|g| structural_profile(g).to_vec()).collect();
    PROFILE_COLUMNS
        .iter()
        .enumerate()
        .map(|(c, name)| {
            let a: Vec<f64> = p1.iter().map(|p| p[c]).collect();
            let b: Vec<f64> = p0.iter().map(|p| p[c]).collect();
            let (d, p) = match cohens_d(&a, &b) {
                Ok((d, p)) => (Some(d), Some(p)),
                Err(Error::DegenerateVariance) => (None, None),
                Err(e) => return Err(e),
            };
            Ok(EffectSizeRow {
                metric: (*name).to_string(),
                cohens_d: d,
                p_value: p,
                significant: p.is_none_or(|p| p < ALPHA),
            })
        })
        .collect()
}

pub fn effect_size_text(rows: &[EffectSizeRow]) -> String {
    let mut out = format!("{:<16} {:>10} {:>10} {:>5}\n", "metric", "cohens_d", "p_value", "sig");
    for r in rows {
        let d = r.cohens_d.map_or("-".into(), |d| format!("{d:.4}"));
        let p = r.p_value.map_or("-".into(), |p| format!("{p:.2e}"));
        out.push_str(&format!(
            "{:<16} {:>10} {:>10} {:>5}\n",
            r.metric,
            d,
            p,
            if r.significant { "*" } else { "" }
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub deg: f64,
    pub clus: f64,
    pub orbit: f64,
    pub spect: f64,
    pub diam: f64,
    pub mmd_rbf: f64,
    pub f1_pr: f64,
    pub n_ref: usize,
    pub n_gen: usize,
}

impl MetricReport {
    /// All metrics; the embedding metrics use a random GIN drawn from `seed`.
    pub fn compute(reference: &[Graph], generated: &[Graph], seed: u64) -> Result<Self> {
        let gin = RandomGin::new(seed, EMBED_DIM);
        let er: Vec<Vec<f64>> = reference.iter().map(|g| gin.embed(g)).collect();
        let eg: Vec<Vec<f64>> = generated.iter().map(|g| gin.embed(g)).collect();
        Ok(Self {
            deg: stat_mmd(StatKind::Degree, reference, generated)?,
            clus: stat_mmd(StatKind::Clustering, reference, generated)?,
            orbit: stat_mmd(StatKind::Orbit, reference, generated)?,
            spect: stat_mmd(StatKind::Spectral, reference, generated)?,
            diam: stat_mmd(StatKind::Diameter, reference, generated)?,
            mmd_rbf: mmd_rbf(&er, &eg)?,
            f1_pr: f1_pr(&er, &eg, DEFAULT_K)?,
            n_ref: reference.len(),
            n_gen: generated.len(),
        })
    }

    pub fn to_text(&self) -> String {
        format!(
            "{:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>8}\n{:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>10.3e} {:>8.2}\n",
            "Deg.", "Clus.", "Orbit", "Spect.", "Diam.", "MMD", "F1",
            self.deg, self.clus, self.orbit, self.spect, self.diam, self.mmd_rbf, self.f1_pr
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn path(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    fn clique(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    fn mixed_set() -> Vec<Graph> {
        (3..9).flat_map(|n| [path(n), clique(n)]).collect()
    }

    #[test]
    fn spectrum_examples() {
        let k2 = laplacian_spectrum(&path(2));
        assert!((k2[0]).abs() < 1e-12 && (k2[1] - 2.0).abs() < 1e-12);
        assert_eq!(laplacian_spectrum(&Graph::empty(1)), vec![0.0]);
        let h = spectral_features(&clique(5), SPECTRAL_BINS);
        assert_eq!(h.len(), SPECTRAL_BINS);
        assert!((h.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mmd_of_identical_sets_is_zero_and_symmetric() {
        let a = mixed_set();
        let b: Vec<Graph> = (4..10).map(path).collect();
        for kind in StatKind::ALL {
            assert!(stat_mmd(kind, &a, &a).unwrap() <= 1e-9, "{kind:?}");
            assert_eq!(stat_mmd(kind, &a, &b).unwrap(), stat_mmd(kind, &b, &a).unwrap());
            let median = StatKernel::median(kind);
            assert!(stat_mmd_with(kind, &a, &a, median).unwrap() <= 1e-9);
        }
        assert!(matches!(stat_mmd(StatKind::Degree, &a, &[]), Err(Error::EmptySet)));
    }

    #[test]
    fn mmd_rbf_examples() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64, 1.0]).collect();
        assert!(mmd_rbf(&x, &x).unwrap() <= 1e-9);
        let far: Vec<Vec<f64>> = vec![vec![0.0, 0.0]; 4];
        let far2: Vec<Vec<f64>> = vec![vec![1e6, 0.0]; 4];
        let m = mmd_rbf(&far, &far2).unwrap();
        assert!(m <= 2.0 + 1e-12 && m > 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let cloud: Vec<Vec<f64>> = (0..200).map(|_| (0..3).map(|_| normal.sample(&mut rng)).collect()).collect();
        assert!(mmd_rbf(&cloud[..100], &cloud[100..]).unwrap() <= 0.05);
    }

    #[test]
    fn f1_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<Vec<f64>> = (0..20).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
        assert_eq!(f1_pr(&a, &a, 5).unwrap(), 100.0);
        let b: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] + 1e3, v[1]]).collect();
        assert_eq!(f1_pr(&a, &b, 5).unwrap(), 0.0);
        assert!(matches!(f1_pr(&a[..5], &a, 5), Err(Error::TooFewSamples { .. })));
        let c: Vec<Vec<f64>> = a.iter().map(|v| vec![v[0] * 1.5, v[1]]).collect();
        assert_eq!(f1_pr(&a, &c, 5).unwrap(), f1_pr(&c, &a, 5).unwrap());
    }

    #[test]
    fn random_gin_is_deterministic_and_invariant() {
        let g = Graph::from_edges(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (1, 4)]).unwrap();
        let e = random_gnn_embed(&g, 3);
        assert_eq!(e.len(), EMBED_DIM);
        assert_eq!(e, random_gnn_embed(&g, 3));
        let h = g.reorder(&[5, 3, 1, 0, 2, 4]);
        for (a, b) in e.iter().zip(random_gnn_embed(&h, 3)) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()));
        }
        assert_ne!(e, random_gnn_embed(&g, 4));
    }

    #[test]
    fn cohens_d_examples() {
        let (d, p) = cohens_d(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap();
        assert!((d + 2.0).abs() < 1e-12);
        assert!(p > 0.0 && p < 0.1);
        assert_eq!(cohens_d(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), (0.0, 1.0));
        assert!(matches!(cohens_d(&[1.0, 1.0], &[2.0, 2.0]), Err(Error::DegenerateVariance)));
        let (d, _) = cohens_d(&[5.0, 6.0, 7.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!(d > 0.0);
        let same = [0.3, 1.2, 2.5, 0.7];
        assert_eq!(cohens_d(&same, &same).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn welch_p_matches_reference_value() {
        // t = -2.449, df = 4 for these samples; two-sided p = 0.0705.
        let (_, p) = cohens_d(&[1.0, 2.0, 3.0], &[3.0, 4.0, 5.0]).unwrap();
        assert!((p - 0.0705).abs() < 1e-3, "{p}");
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]) - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) + 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn effect_sizes_separate_cliques_and_paths() {
        let paths: Vec<Graph> = (5..=8).cycle().take(40).map(path).collect();
        let cliques: Vec<Graph> = (5..=8).cycle().take(40).map(clique).collect();
        let rows = effect_size_table(&paths, &cliques).unwrap();
        assert_eq!(rows.len(), 10);
        let density = rows.iter().find(|r| r.metric == "density").unwrap();
        assert!(density.cohens_d.unwrap() > 2.0 && density.p_value.unwrap() < 0.01);
        let clustering = rows.iter().find(|r| r.metric == "clustering").unwrap();
        assert_eq!((clustering.cohens_d, clustering.significant), (None, true));
        let same = effect_size_table(&paths, &paths).unwrap();
        assert!(same.iter().all(|r| r.cohens_d == Some(0.0) && !r.significant));
        assert!(effect_size_text(&rows).lines().count() == 11);
    }

    #[test]
    fn metric_report_on_identical_sets() {
        let a = mixed_set();
        let r = MetricReport::compute(&a, &a, 0).unwrap();
        for v in [r.deg, r.clus, r.orbit, r.spect, r.diam, r.mmd_rbf] {
            assert!(v <= 1e-9);
        }
        assert_eq!(r.f1_pr, 100.0);
        assert!(r.to_text().contains("Deg."));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn graph(max_n: usize) -> impl Strategy<Value = Graph> {
            (1..=max_n).prop_flat_map(|n| {
                proptest::collection::vec(any::<bool>(), n * (n - 1) / 2).prop_map(move |bits| {
                    let mut g = Graph::empty(n);
                    let mut k = 0;
                    for i in 0..n {
                        for j in (i + 1)..n {
                            if bits[k] {
                                g.add_edge(i, j);
                            }
                            k += 1;
                        }
                    }
                    g
                })
            })
        }

        proptest! {
            #[test]
            fn spectrum_in_range(g in graph(12)) {
                for ev in laplacian_spectrum(&g) {
                    prop_assert!((-1e-8..=2.0 + 1e-8).contains(&ev));
                }
            }

            #[test]
            fn mmd_axioms(a in proptest::collection::vec(graph(7), 1..6), b in proptest::collection::vec(graph(7), 1..6)) {
                for kind in StatKind::ALL {
                    let ab = stat_mmd(kind, &a, &b).unwrap();
                    prop_assert!(ab >= 0.0);
                    prop_assert_eq!(ab, stat_mmd(kind, &b, &a).unwrap());
                    prop_assert!(stat_mmd(kind, &a, &a).unwrap() <= 1e-9);
                }
            }
        }
    }
}
