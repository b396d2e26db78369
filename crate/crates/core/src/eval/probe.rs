//! Graph classifier used to score generated graphs by class.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::net::{Bound, ParamStore};
use crate::training::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub hidden: usize,
    pub layers: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            layers: 3,
            epochs: 200,
            lr: 1e-2,
            seed: 0,
        }
    }
}

/// GIN with sum pooling and a linear read-out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierProbe {
    config: ProbeConfig,
    classes: Vec<i64>,
    params: ParamStore,
}

struct GraphInput {
    /// `A + I`.
    propagate: Matrix,
    features: Matrix,
}

impl GraphInput {
    fn new(g: &Graph) -> Self {
        let n = g.n_nodes();
        let propagate = Matrix::from_fn(n, n, |i, j| f64::from(i == j || g.has_edge(i, j)));
        let features = Matrix::from_fn(n, 2, |i, c| if c == 0 { 1.0 } else { (1.0 + g.degree(i) as f64).ln() });
        Self { propagate, features }
    }
}

impl ClassifierProbe {
    /// Trains on labelled graphs; unlabelled graphs are rejected.
    pub fn train(graphs: &[Graph], config: ProbeConfig) -> Result<Self> {
        if graphs.is_empty() {
            return Err(Error::EmptySet);
        }
        let labels: Vec<i64> = graphs
            .iter()
            .map(|g| g.label.ok_or_else(|| Error::InvalidConfig("probe graphs need labels".into())))
            .collect::<Result<_>>()?;
        let mut classes = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::SingleClass);
        }
        if config.layers == 0 || config.hidden == 0 || config.lr <= 0.0 {
            return Err(Error::InvalidConfig("probe needs layers, hidden units and a positive rate".into()));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::default();
        let mut fan_in = 2;
        for l in 0..config.layers {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive scale");
            params.add(format!("gin{l}.w"), Matrix::from_fn(fan_in, config.hidden, |_, _| normal.sample(&mut rng)));
            params.add(format!("gin{l}.b"), Matrix::zeros(1, config.hidden));
            fan_in = config.hidden;
        }
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive scale");
        params.add("out.w", Matrix::from_fn(fan_in, classes.len(), |_, _| normal.sample(&mut rng)));
        params.add("out.b", Matrix::zeros(1, classes.len()));

        let mut probe = Self { config, classes, params };
        let inputs: Vec<GraphInput> = graphs.iter().map(GraphInput::new).collect();
        let targets: Vec<Matrix> = labels
            .iter()
            .map(|l| {
                let idx = probe.class_index(*l).expect("label collected above");
                Matrix::from_fn(1, probe.classes.len(), |_, c| f64::from(c == idx))
            })
            .collect();
        let mut adam = Adam::new(probe.config.lr, probe.params.values());
        for _ in 0..probe.config.epochs {
            let tape = Tape::new();
            let p = probe.params.bind(&tape);
            let mut loss: Option<Var> = None;
            for (input, target) in inputs.iter().zip(&targets) {
                let probs = probe.forward(&p, &tape, input).clamp(1e-12, 1.0);
                let nll = probs.ln().mul(tape.constant(target.clone())).sum().scale(-1.0);
                loss = Some(match loss {
                    Some(acc) => acc.add(nll),
                    None => nll,
                });
            }
            let loss = loss.expect("non-empty").scale(1.0 / inputs.len() as f64);
            if !loss.scalar_value().is_finite() {
                return Err(Error::NonFinite("probe loss".into()));
            }
            let mut grads = tape.backward(loss);
            let g: Vec<Option<Matrix>> = p.vars().iter().map(|v| grads.take(*v)).collect();
            adam.step(&mut probe.params, &g);
        }
        Ok(probe)
    }

    fn forward<'t>(&self, p: &Bound<'t>, tape: &'t Tape, input: &GraphInput) -> Var<'t> {
        let propagate = tape.constant(input.propagate.clone());
        let mut h = tape.constant(input.features.clone());
        for l in 0..self.config.layers {
            h = propagate.matmul(h).matmul(p.var(2 * l)).add_row(p.var(2 * l + 1)).layer_norm_rows(1e-5).relu();
        }
        let o = 2 * self.config.layers;
        h.sum_cols().matmul(p.var(o)).add_row(p.var(o + 1)).softmax_rows()
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn class_index(&self, label: i64) -> Option<usize> {
        self.classes.binary_search(&label).ok()
    }

    /// Class probabilities in the order of [`Self::classes`].
    pub fn classify(&self, g: &Graph) -> Vec<f64> {
        if g.n_nodes() == 0 {
            return vec![1.0 / self.classes.len() as f64; self.classes.len()];
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        self.forward(&p, &tape, &GraphInput::new(g)).value().into_vec()
    }

    pub fn predict(&self, g: &Graph) -> i64 {
        let probs = self.classify(g);
        let best = (0..probs.len()).fold(0, |b, i| if probs[i] > probs[b] { i } else { b });
        self.classes[best]
    }

    /// Fraction of labelled graphs predicted correctly.
    pub fn accuracy(&self, graphs: &[Graph]) -> f64 {
        let hits = graphs.iter().filter(|g| g.label == Some(self.predict(g))).count();
        hits as f64 / graphs.len().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled() -> Vec<Graph> {
        let mut out = Vec::new();
        for n in 4..=8 {
            let path: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
            let clique: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
            out.push(Graph::from_edges(n, &path).unwrap().with_label(Some(0)));
            out.push(Graph::from_edges(n, &clique).unwrap().with_label(Some(3)));
        }
        out
    }

    fn quick() -> ProbeConfig {
        ProbeConfig {
            hidden: 8,
            epochs: 60,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn separates_paths_from_cliques() {
        let set = labelled();
        let probe = ClassifierProbe::train(&set, quick()).unwrap();
        assert_eq!(probe.classes(), &[0, 3]);
        assert_eq!(probe.accuracy(&set), 1.0);
        let p = probe.classify(&set[0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let set = labelled();
        let probe = ClassifierProbe::train(&set, quick()).unwrap();
        let back = ClassifierProbe::from_json(&probe.to_json().unwrap()).unwrap();
        for g in &set {
            assert_eq!(probe.classify(g), back.classify(g));
        }
    }

    #[test]
    fn rejects_bad_input() {
        let one_class: Vec<Graph> = labelled().into_iter().filter(|g| g.label == Some(0)).collect();
        assert!(matches!(ClassifierProbe::train(&one_class, quick()), Err(Error::SingleClass)));
        assert!(matches!(ClassifierProbe::train(&[], quick()), Err(Error::EmptySet)));
        let unlabelled = vec![Graph::empty(3), Graph::empty(2)];
        assert!(ClassifierProbe::train(&unlabelled, quick()).is_err());
    }
}
