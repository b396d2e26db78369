//! Datasets: file loaders, the synthetic lobster generator, and seeded splits.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;

/// Named, immutable collection of graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSet {
    graphs: Vec<Graph>,
    name: String,
    n_max: usize,
    avg_nodes: f64,
}

impl GraphSet {
    pub fn new(name: impl Into<String>, graphs: Vec<Graph>) -> Self {
        let n_max = graphs.iter().map(Graph::n_nodes).max().unwrap_or(0);
        let avg_nodes = if graphs.is_empty() {
            0.0
        } else {
            graphs.iter().map(|g| g.n_nodes() as f64).sum::<f64>() / graphs.len() as f64
        };
        Self {
            graphs,
            name: name.into(),
            n_max,
            avg_nodes,
        }
    }

    pub fn graphs(&self) -> &[Graph] {
        &self.graphs
    }

    pub fn into_graphs(self) -> Vec<Graph> {
        self.graphs
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn avg_nodes(&self) -> f64 {
        self.avg_nodes
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Graph> {
        self.graphs.iter()
    }

    /// Writes one graph JSON record per line.
    pub fn save_json_lines(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for g in &self.graphs {
            serde_json::to_writer(&mut out, g)?;
            out.write_all(b"\n")?;
        }
        out.flush()?;
        Ok(())
    }
}

impl<'a> IntoIterator for &'a GraphSet {
    type Item = &'a Graph;
    type IntoIter = std::slice::Iter<'a, Graph>;

    fn into_iter(self) -> Self::IntoIter {
        self.graphs.iter()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetFormat {
    JsonLines,
    TuBundle,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json-lines" | "jsonl" => Ok(Self::JsonLines),
            "tu-bundle" | "tu" => Ok(Self::TuBundle),
            other => Err(Error::InvalidConfig(format!("unknown dataset format {other}"))),
        }
    }
}

/// Datasets addressable by name from the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Lobster,
    Mutag,
    Ptc,
    OgbgMolbbbp,
}

impl FromStr for DatasetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lobster" => Ok(Self::Lobster),
            "mutag" => Ok(Self::Mutag),
            "ptc" => Ok(Self::Ptc),
            "ogbg-molbbbp" => Ok(Self::OgbgMolbbbp),
            other => Err(Error::InvalidConfig(format!("unknown dataset {other}"))),
        }
    }
}

pub fn load_edge_list_dataset(path: &Path, format: DatasetFormat) -> Result<GraphSet> {
    match format {
        DatasetFormat::JsonLines => load_json_lines(path),
        DatasetFormat::TuBundle => load_tu_bundle(path),
    }
}

fn load_json_lines(path: &Path) -> Result<GraphSet> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut graphs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let g: Graph = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            record: idx + 1,
            message: e.to_string(),
        })?;
        graphs.push(g);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    if graphs.is_empty() {
        return Err(Error::EmptyDataset(name));
    }
    Ok(GraphSet::new(name, graphs))
}

/// Locates `<name>_A.txt` inside a bundle directory, or treats `path` as the
/// `<dir>/<name>` prefix.
fn tu_prefix(path: &Path) -> Result<(PathBuf, String)> {
    if path.is_dir() {
        let dir_name = path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if path.join(format!("{dir_name}_A.txt")).exists() {
            return Ok((path.to_path_buf(), dir_name));
        }
        for entry in fs::read_dir(path)? {
            let file = entry?.file_name().to_string_lossy().into_owned();
            if let Some(name) = file.strip_suffix("_A.txt") {
                return Ok((path.to_path_buf(), name.to_string()));
            }
        }
        return Err(Error::Parse {
            path: path.to_path_buf(),
            record: 0,
            message: "no *_A.txt file in bundle directory".into(),
        });
    }
    let dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let name = path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok((dir, name))
}

fn read_integers(path: &Path, per_line: usize) -> Result<Vec<Vec<i64>>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            record: idx + 1,
            message,
        };
        let values = line
            .split(',')
            .map(|t| t.trim().parse::<i64>().map_err(|e| parse_err(e.to_string())))
            .collect::<Result<Vec<_>>>()?;
        if values.len() != per_line {
            return Err(parse_err(format!("expected {per_line} values, found {}", values.len())));
        }
        rows.push(values);
    }
    Ok(rows)
}

fn load_tu_bundle(path: &Path) -> Result<GraphSet> {
    let (dir, name) = tu_prefix(path)?;
    let indicator_path = dir.join(format!("{name}_graph_indicator.txt"));
    let indicator: Vec<usize> = read_integers(&indicator_path, 1)?
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            usize::try_from(v[0]).ok().filter(|&g| g >= 1).ok_or(Error::Parse {
                path: indicator_path.clone(),
                record: i + 1,
                message: "graph ids are 1-based".into(),
            })
        })
        .collect::<Result<_>>()?;
    if indicator.is_empty() {
        return Err(Error::EmptyDataset(name));
    }
    let n_graphs = *indicator.iter().max().unwrap();

    // Local index of each global node within its graph.
    let mut sizes = vec![0usize; n_graphs];
    let mut local = Vec::with_capacity(indicator.len());
    for &g in &indicator {
        local.push(sizes[g - 1]);
        sizes[g - 1] += 1;
    }

    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_graphs];
    let a_path = dir.join(format!("{name}_A.txt"));
    for (idx, pair) in read_integers(&a_path, 2)?.into_iter().enumerate() {
        let bad = |message: &str| Error::Parse {
            path: a_path.clone(),
            record: idx + 1,
            message: message.into(),
        };
        let (u, v) = (pair[0], pair[1]);
        if u < 1 || v < 1 || u as usize > indicator.len() || v as usize > indicator.len() {
            return Err(bad("node id out of range"));
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if indicator[u] != indicator[v] {
            return Err(bad("edge crosses graphs"));
        }
        if u != v {
            edges[indicator[u] - 1].push((local[u], local[v]));
        }
    }

    let labels_path = dir.join(format!("{name}_graph_labels.txt"));
    let labels: Option<Vec<i64>> = if labels_path.exists() {
        Some(read_integers(&labels_path, 1)?.into_iter().map(|v| v[0]).collect())
    } else {
        None
    };

    let mut graphs = Vec::with_capacity(n_graphs);
    for (gi, (size, e)) in sizes.into_iter().zip(edges).enumerate() {
        if size == 0 {
            return Err(Error::Parse {
                path: indicator_path.clone(),
                record: 0,
                message: format!("graph {} has no nodes", gi + 1),
            });
        }
        let mut g = Graph::from_edges(size, &e)?;
        g.label = labels.as_ref().and_then(|l| l.get(gi).copied());
        g.id = Some(format!("{name}-{}", gi + 1));
        graphs.push(g);
    }
    Ok(GraphSet::new(name, graphs))
}

/// Parameters of the random lobster sampler.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LobsterParams {
    pub count: usize,
    pub expected_backbone: usize,
    pub p1: f64,
    pub p2: f64,
    pub min_n: usize,
    pub max_n: usize,
    pub seed: u64,
}

impl LobsterParams {
    /// Defaults for a target average size: backbone ⌈avg/2⌉, p1 = p2 = 0.5.
    pub fn for_average(count: usize, avg_nodes: usize, min_n: usize, max_n: usize, seed: u64) -> Self {
        Self {
            count,
            expected_backbone: avg_nodes.div_ceil(2),
            p1: 0.5,
            p2: 0.5,
            min_n,
            max_n,
            seed,
        }
    }
}

impl Default for LobsterParams {
    fn default() -> Self {
        Self::for_average(100, 52, 10, 100, 1234)
    }
}

const LOBSTER_ATTEMPTS: usize = 10_000;

fn sample_lobster(rng: &mut impl Rng, expected_backbone: usize, p1: f64, p2: f64) -> Vec<(usize, usize)> {
    // Backbone length is uniform on [0, 2·expected] rounded, at least one node.
    let backbone = ((2.0 * rng.random::<f64>() * expected_backbone as f64 + 0.5) as usize).max(1);
    let mut edges: Vec<(usize, usize)> = (1..backbone).map(|i| (i - 1, i)).collect();
    let mut next = backbone;
    for spine in 0..backbone {
        while rng.random::<f64>() < p1 {
            let leaf = next;
            next += 1;
            edges.push((spine, leaf));
            while rng.random::<f64>() < p2 {
                edges.push((leaf, next));
                next += 1;
            }
        }
    }
    edges
}

pub fn generate_lobster_set(params: &LobsterParams) -> Result<GraphSet> {
    let LobsterParams {
        count,
        expected_backbone,
        p1,
        p2,
        min_n,
        max_n,
        seed,
    } = *params;
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&p2) {
        return Err(Error::InvalidConfig("lobster probabilities must lie in [0, 1]".into()));
    }
    if min_n > max_n {
        return Err(Error::InvalidConfig("min_n must not exceed max_n".into()));
    }
    // p = 1 never terminates.
    if p1 >= 1.0 || p2 >= 1.0 {
        return Err(Error::RejectionExhausted { attempts: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(count);
    for idx in 0..count {
        let mut accepted = None;
        for _ in 0..LOBSTER_ATTEMPTS {
            let edges = sample_lobster(&mut rng, expected_backbone, p1, p2);
            let n = edges.len() + 1;
            if (min_n..=max_n).contains(&n) {
                accepted = Some((n, edges));
                break;
            }
        }
        let (n, edges) = accepted.ok_or(Error::RejectionExhausted {
            attempts: LOBSTER_ATTEMPTS,
        })?;
        let mut g = Graph::from_edges(n, &edges)?;
        g.id = Some(format!("lobster-{idx}"));
        graphs.push(g);
    }
    Ok(GraphSet::new("lobster", graphs))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction_of_train: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    /// 80/20 train/test with 20% of the training part held out for validation.
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction_of_train: 0.2,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: GraphSet,
    pub val: GraphSet,
    pub test: GraphSet,
}

pub const MIN_SPLIT_SIZE: usize = 5;

/// Seeded shuffle then partition: `test = round((1 − train_fraction)·N)`,
/// `val = round(val_fraction·(N − test))`, `train` takes the rest.
pub fn split(set: &GraphSet, spec: &SplitSpec) -> Result<Splits> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)
        || !(0.0..1.0).contains(&spec.val_fraction_of_train)
    {
        return Err(Error::InvalidConfig("split fractions must lie in (0, 1)".into()));
    }
    let n = set.len();
    if n < MIN_SPLIT_SIZE {
        return Err(Error::TooFewGraphs {
            needed: MIN_SPLIT_SIZE,
            got: n,
        });
    }
    let n_test = ((1.0 - spec.train_fraction) * n as f64).round() as usize;
    let n_val = (spec.val_fraction_of_train * (n - n_test) as f64).round() as usize;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let pick = |idx: &[usize], suffix: &str| {
        GraphSet::new(
            format!("{}-{suffix}", set.name()),
            idx.iter().map(|&i| set.graphs[i].clone()).collect(),
        )
    };
    let (test_idx, rest) = order.split_at(n_test);
    let (val_idx, train_idx) = rest.split_at(n_val);
    Ok(Splits {
        train: pick(train_idx, "train"),
        val: pick(val_idx, "val"),
        test: pick(test_idx, "test"),
    })
}

/// Seeded 50/50 halving used for ideal-score reference distances.
pub fn halves(set: &GraphSet, seed: u64) -> Result<(GraphSet, GraphSet)> {
    let s = split(
        set,
        &SplitSpec {
            train_fraction: 0.5,
            val_fraction_of_train: 0.0,
            seed,
        },
    )?;
    Ok((s.train, s.test))
}

/// Labels of the two-class synthetic corpus.
pub const PATH_LABEL: i64 = 0;
pub const CLIQUE_LABEL: i64 = 1;

/// Two-class corpus of connected near-cliques (about a tenth of the edges
/// removed, label 1) and paths (label 0), `per_class` each, with node counts
/// drawn uniformly from `min_n..=max_n`.
pub fn clique_path_corpus(per_class: usize, min_n: usize, max_n: usize, seed: u64) -> Result<GraphSet> {
    if min_n < 3 || max_n < min_n {
        return Err(Error::InvalidConfig("corpus sizes need 3 <= min_n <= max_n".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(2 * per_class);
    for _ in 0..per_class {
        let n = rng.random_range(min_n..=max_n);
        let mut edges: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
        edges.shuffle(&mut rng);
        let mut g = Graph::from_edges(n, &edges)?;
        let mut to_remove = (edges.len() as f64 * 0.1).round() as usize;
        for &(i, j) in &edges {
            if to_remove == 0 {
                break;
            }
            g.remove_edge(i, j);
            if g.is_connected() {
                to_remove -= 1;
            } else {
                g.add_edge(i, j);
            }
        }
        graphs.push(g.with_label(Some(CLIQUE_LABEL)));
    }
    for _ in 0..per_class {
        let n = rng.random_range(min_n..=max_n);
        let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
        graphs.push(Graph::from_edges(n, &edges)?.with_label(Some(PATH_LABEL)));
    }
    Ok(GraphSet::new("clique-path", graphs))
}
