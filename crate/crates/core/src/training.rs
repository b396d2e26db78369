//! Training: the per-graph inference and reconstruction pass, Gumbel-softmax
//! topic selection, Adam, validation-based checkpoint selection, and the
//! metrics log.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gumbel, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assembly::{self, AssemblyMode, AssemblyStep, GenerationTrace};
use crate::autograd::{Matrix, Tape, Var};
use crate::data::{DatasetName, GraphSet};
use crate::error::{Error, Result};
use crate::graph::{canonicalize, pad, Graph, PaddedGraph};
use crate::net::{EncoderInput, NetConfig, NgtmModel};
use crate::objectives::{self, check_simplex, LossReport, LossWeights, ReconTarget, DEFAULT_S_STEPS};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const METRICS_LOG: &str = "metrics.jsonl";
/// Offset mixed into the seed for the fixed validation noise stream.
const VALIDATION_STREAM: u64 = 0x7661_6c69_6461_7465;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub dataset: String,
    pub net: NetConfig,
    pub weights: LossWeights,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub gumbel_tau_start: f64,
    pub gumbel_tau_end: f64,
    pub val_every: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint_dir: Option<PathBuf>,
    /// Transition powers compared by the macro loss.
    pub s_steps: usize,
    /// Straight-through hard topic choice; `false` trains on the soft relaxation.
    pub straight_through: bool,
    /// Edge threshold for discretization.
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dataset: "lobster".into(),
            net: NetConfig::default(),
            weights: LossWeights::default(),
            lr: 3e-4,
            epochs: 20_000,
            batch_size: 16,
            seed: 0,
            gumbel_tau_start: 1.0,
            gumbel_tau_end: 0.1,
            val_every: 10,
            checkpoint_dir: None,
            s_steps: DEFAULT_S_STEPS,
            straight_through: true,
            threshold: 0.5,
        }
    }
}

impl TrainConfig {
    /// Per-dataset defaults.
    pub fn for_dataset(name: DatasetName, n_max: usize) -> Self {
        let n_sub = match name {
            DatasetName::Mutag => 8,
            DatasetName::Lobster => 10,
            DatasetName::Ptc | DatasetName::OgbgMolbbbp => 20,
        };
        let epochs = match name {
            DatasetName::OgbgMolbbbp => 10_000,
            _ => 20_000,
        };
        Self {
            dataset: serde_json::to_value(name)
                .ok()
                .and_then(|v| v.as_str().map(str::to_owned))
                .unwrap_or_default(),
            net: NetConfig {
                k: 5,
                w: 20,
                n_sub: n_sub.min(n_max),
                n_max,
                ..NetConfig::default()
            },
            weights: LossWeights::for_dataset(name),
            epochs,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        self.weights.validate()?;
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidConfig("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.val_every == 0 {
            return Err(Error::InvalidConfig("epochs, batch_size and val_every must be positive".into()));
        }
        if !(self.gumbel_tau_end > 0.0 && self.gumbel_tau_end <= self.gumbel_tau_start) {
            return Err(Error::InvalidConfig("require 0 < gumbel_tau_end <= gumbel_tau_start".into()));
        }
        Ok(())
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Gumbel temperature at a 1-based epoch, geometric between the endpoints.
    pub fn tau(&self, epoch: usize) -> f64 {
        tau_schedule(self.gumbel_tau_start, self.gumbel_tau_end, epoch, self.epochs)
    }
}

pub fn tau_schedule(start: f64, end: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs <= 1 {
        return start;
    }
    if epoch >= epochs {
        return end;
    }
    let frac = (epoch.max(1) - 1) as f64 / (epochs - 1) as f64;
    start * (end / start).powf(frac)
}

/// Gumbel-softmax relaxation of a categorical draw from `theta`.
pub fn gumbel_topic_sample(theta: &[f64], tau: f64, noise: &[f64]) -> Result<(Vec<f64>, usize)> {
    check_simplex(theta)?;
    if noise.len() != theta.len() {
        return Err(Error::ShapeMismatch("gumbel noise length".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig("tau must be positive".into()));
    }
    let logits: Vec<f64> = theta
        .iter()
        .zip(noise)
        .map(|(t, g)| (t.max(f64::MIN_POSITIVE).ln() + g) / tau)
        .collect();
    let soft = Matrix::row_vector(logits).softmax_rows().into_vec();
    Ok((soft.clone(), argmax(&soft)))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// A training graph with its precomputed encoder inputs and loss targets.
#[derive(Clone, Debug)]
pub struct Example {
    pub padded: PaddedGraph,
    pub input: EncoderInput,
    pub target: ReconTarget,
}

impl Example {
    pub fn new(g: &Graph, n_max: usize, s_steps: usize) -> Result<Self> {
        let padded = pad(&canonicalize(g), n_max)?;
        Ok(Self {
            input: EncoderInput::new(&padded),
            target: ReconTarget::new(&padded, s_steps),
            padded,
        })
    }
}

/// All random draws consumed by one reconstruction pass.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphNoise {
    pub theta: Vec<f64>,
    pub global: Vec<f64>,
    /// Per step: Gumbel noise over topics and a standard-normal latent draw.
    pub steps: Vec<(Vec<f64>, Vec<f64>)>,
}

impl GraphNoise {
    pub fn draw<R: Rng + ?Sized>(cfg: &NetConfig, rng: &mut R) -> Self {
        let gumbel = Gumbel::new(0.0, 1.0).expect("valid gumbel");
        let normal = |n: usize, rng: &mut R| -> Vec<f64> { (0..n).map(|_| StandardNormal.sample(rng)).collect() };
        let theta = normal(cfg.k, rng);
        let global = normal(cfg.latent_dim, rng);
        let steps = (0..cfg.w)
            .map(|_| {
                let g: Vec<f64> = (0..cfg.k).map(|_| gumbel.sample(rng)).collect();
                (g, normal(cfg.latent_dim, rng))
            })
            .collect();
        Self { theta, global, steps }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForwardOptions {
    pub tau: f64,
    pub straight_through: bool,
    pub weights: LossWeights,
}

/// Tape handles for one reconstruction pass.
pub struct Forward<'t> {
    pub pred: Var<'t>,
    pub rec: Var<'t>,
    pub kl_theta: Var<'t>,
    pub kl_g: Var<'t>,
    pub kl_topics: Var<'t>,
    pub ortho: Var<'t>,
    pub total: Var<'t>,
    pub theta: Vec<f64>,
    pub z_g: Vec<f64>,
    pub steps: Vec<AssemblyStep>,
}

impl Forward<'_> {
    pub fn report(&self) -> LossReport {
        LossReport {
            rec: self.rec.scalar_value(),
            kl_theta: self.kl_theta.scalar_value(),
            kl_g: self.kl_g.scalar_value(),
            kl_topics: self.kl_topics.scalar_value(),
            ortho: self.ortho.scalar_value(),
            total: self.total.scalar_value(),
        }
    }

    pub fn trace(&self, threshold: f64) -> GenerationTrace {
        let final_soft = self.pred.value();
        GenerationTrace {
            theta: self.theta.clone(),
            z_g: self.z_g.clone(),
            steps: self.steps.clone(),
            final_graph: assembly::discretize(&final_soft, threshold),
            final_soft,
        }
    }
}

/// Encodes all latents of `ex`, reconstructs it through `W` assembly steps
/// and assembles the weighted loss.
pub fn forward_graph<'t>(
    model: &NgtmModel,
    p: &crate::net::Bound<'t>,
    tape: &'t Tape,
    ex: &Example,
    noise: &GraphNoise,
    opts: &ForwardOptions,
) -> Forward<'t> {
    let cfg = model.config();
    let (k, d, n_max) = (cfg.k, cfg.latent_dim, cfg.n_max);

    let topic = model.forward_topic(p, tape, &ex.input);
    let z_theta = topic.sample(tape.constant(Matrix::row_vector(noise.theta.clone())));
    let theta = z_theta.softmax_rows();
    let kl_theta = objectives::kl_standard_normal_var(topic.mu, topic.logvar);

    let (z_g, kl_g) = if cfg.use_global_encoder {
        let global = model.forward_global(p, tape, &ex.input);
        let z = global.sample(tape.constant(Matrix::row_vector(noise.global.clone())));
        (z, objectives::kl_standard_normal_var(global.mu, global.logvar))
    } else {
        (tape.constant(Matrix::zeros(1, d)), tape.scalar(0.0))
    };

    let posts = model.forward_structure(p, tape, &ex.input, &Matrix::identity(k));
    let priors = model.forward_priors(p);
    let kl_topics = objectives::topic_kl_var(theta, posts.mu, posts.logvar, priors.mu, priors.logvar);
    let ortho = objectives::ortho_loss_var(priors.mu);
    let post_sigma = posts.sigma();
    let log_theta = theta.ln();

    let off_diagonal = tape.constant(Matrix::off_diagonal_ones(n_max));
    let empty = tape.constant(Matrix::zeros(n_max, n_max));
    let mut graph = empty;
    let mut steps = Vec::with_capacity(cfg.w);
    for (w, (gumbel, eps)) in noise.steps.iter().enumerate() {
        let soft = log_theta
            .add(tape.constant(Matrix::row_vector(gumbel.clone())))
            .scale(1.0 / opts.tau)
            .softmax_rows();
        let soft_value = soft.value();
        let hard = argmax(soft_value.data());
        let choice = if opts.straight_through {
            let offset = Matrix::from_fn(1, k, |_, j| f64::from(j == hard) - soft_value.get(0, j));
            soft.add(tape.constant(offset))
        } else {
            soft
        };
        let eps_rows = Matrix::from_fn(k, d, |_, j| eps[j]);
        let candidates = posts.mu.add(post_sigma.mul(tape.constant(eps_rows)));
        let z = choice.matmul(candidates);
        let sub = model.forward_decode(p, tape, z, choice);
        let context = match cfg.assembly_mode {
            AssemblyMode::Sequential => graph,
            AssemblyMode::Parallel => empty,
        };
        let position = model.forward_position(p, sub, context, z_g);
        let mapping = model.forward_mapping(p, position);
        let added = assembly::embed_var(sub, mapping, off_diagonal);
        graph = match (cfg.assembly_mode, cfg.union_rule) {
            (AssemblyMode::Parallel, assembly::UnionRule::Clamp) => graph.add(added),
            (_, rule) => rule.combine_var(graph, added),
        };
        let after = match (cfg.assembly_mode, cfg.union_rule) {
            (AssemblyMode::Parallel, assembly::UnionRule::Clamp) => graph.value().map(|v| v.min(1.0)),
            _ => graph.value(),
        };
        steps.push(AssemblyStep {
            index: w,
            topic: hard,
            substructure: sub.value(),
            mapping: mapping.value(),
            graph_after: after,
        });
    }
    let pred = match (cfg.assembly_mode, cfg.union_rule) {
        (AssemblyMode::Parallel, assembly::UnionRule::Clamp) => graph.clamp(f64::NEG_INFINITY, 1.0),
        _ => graph,
    };

    let rec = objectives::reconstruction_loss_var(pred, &ex.target);
    let w = &opts.weights;
    let total = rec
        .scale(w.alpha)
        .add(kl_theta.scale(w.beta))
        .add(kl_g.scale(w.delta))
        .add(kl_topics.scale(w.gamma))
        .add(ortho.scale(w.omega));
    Forward {
        pred,
        rec,
        kl_theta,
        kl_g,
        kl_topics,
        ortho,
        total,
        theta: theta.value().into_vec(),
        z_g: z_g.value().into_vec(),
        steps,
    }
}

/// Plain-value reconstruction of one graph: soft adjacency, loss components
/// and the assembly trace.
pub fn reconstruct_graph<R: Rng + ?Sized>(
    model: &NgtmModel,
    g: &Graph,
    opts: &ForwardOptions,
    s_steps: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<(Matrix, LossReport, GenerationTrace)> {
    let ex = Example::new(g, model.config().n_max, s_steps)?;
    let noise = GraphNoise::draw(model.config(), rng);
    let tape = Tape::new();
    let p = model.bind(&tape);
    let f = forward_graph(model, &p, &tape, &ex, &noise, opts);
    Ok((f.pred.value(), f.report(), f.trace(threshold)))
}

/// Adam with the usual defaults.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[Matrix]) -> Self {
        let zeros: Vec<Matrix> = shapes.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Missing gradients are treated as zero.
    pub fn step(&mut self, params: &mut crate::net::ParamStore, grads: &[Option<Matrix>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let value = params.get_mut(i);
            for ((x, gi), (mi, vi)) in value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *x -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub model: NgtmModel,
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_metric: f64,
    /// Seed of the training stream; resuming restarts it at `epoch`.
    pub seed_state: u64,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let ckpt: Self = serde_json::from_slice(&fs::read(path)?)?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "unsupported checkpoint version {}",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    /// Stable content identifier (FNV-1a over the serialized parameters).
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(&self.model).unwrap_or_default();
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: usize,
    pub epoch: usize,
    pub split: String,
    pub rec: f64,
    pub kl_theta: f64,
    pub kl_g: f64,
    pub kl_topics: f64,
    pub ortho: f64,
    pub total: f64,
}

impl MetricRecord {
    fn new(step: usize, epoch: usize, split: &str, r: &LossReport) -> Self {
        Self {
            step,
            epoch,
            split: split.into(),
            rec: r.rec,
            kl_theta: r.kl_theta,
            kl_g: r.kl_g,
            kl_topics: r.kl_topics,
            ortho: r.ortho,
            total: r.total,
        }
    }

    pub fn report(&self) -> LossReport {
        LossReport {
            rec: self.rec,
            kl_theta: self.kl_theta,
            kl_g: self.kl_g,
            kl_topics: self.kl_topics,
            ortho: self.ortho,
            total: self.total,
        }
    }
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<MetricRecord>,
}

impl TrainOutcome {
    /// Mean training reports per epoch, in epoch order.
    pub fn epoch_means(&self) -> Vec<LossReport> {
        let mut out: Vec<Vec<LossReport>> = Vec::new();
        for r in self.history.iter().filter(|r| r.split == "train") {
            if out.len() < r.epoch {
                out.resize(r.epoch, Vec::new());
            }
            out[r.epoch - 1].push(r.report());
        }
        out.iter().map(|v| LossReport::mean(v)).collect()
    }
}

/// Mean weighted loss of `examples` under a fixed noise stream.
pub fn evaluate(model: &NgtmModel, examples: &[Example], opts: &ForwardOptions, seed: u64) -> LossReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reports: Vec<LossReport> = examples
        .iter()
        .map(|ex| {
            let noise = GraphNoise::draw(model.config(), &mut rng);
            let tape = Tape::new();
            let p = model.bind(&tape);
            forward_graph(model, &p, &tape, ex, &noise, opts).report()
        })
        .collect();
    LossReport::mean(&reports)
}

/// One optimizer step over a batch; returns the mean report before the update.
pub fn train_step<R: Rng + ?Sized>(
    model: &mut NgtmModel,
    adam: &mut Adam,
    batch: &[&Example],
    opts: &ForwardOptions,
    rng: &mut R,
) -> Result<LossReport> {
    let noises: Vec<GraphNoise> = batch.iter().map(|_| GraphNoise::draw(model.config(), rng)).collect();
    let (report, grads) = {
        let tape = Tape::new();
        let p = model.bind(&tape);
        let mut reports = Vec::with_capacity(batch.len());
        let mut sum: Option<Var<'_>> = None;
        for (ex, noise) in batch.iter().zip(&noises) {
            let f = forward_graph(model, &p, &tape, ex, noise, opts);
            reports.push(f.report());
            sum = Some(match sum {
                None => f.total,
                Some(s) => s.add(f.total),
            });
        }
        let loss = sum.ok_or(Error::EmptySequence)?.scale(1.0 / batch.len() as f64);
        let mut g = tape.backward(loss);
        let grads: Vec<Option<Matrix>> = p.vars().iter().map(|v| g.take(*v)).collect();
        (LossReport::mean(&reports), grads)
    };
    if !report.total.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("loss or gradient".into()));
    }
    adam.step(model.params_mut(), &grads);
    Ok(report)
}

pub fn prepare(set: &GraphSet, n_max: usize, s_steps: usize) -> Result<Vec<Example>> {
    set.iter().map(|g| Example::new(g, n_max, s_steps)).collect()
}

/// Trains from a fresh initialization. When `checkpoint_dir` is set, writes
/// `best.ckpt`, `last.ckpt` and `metrics.jsonl` there.
pub fn train(config: &TrainConfig, train_set: &GraphSet, val_set: &GraphSet) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset(train_set.name().to_string()));
    }
    let model = NgtmModel::new(config.net.clone(), config.seed)?;
    train_from(model, config, train_set, val_set)
}

/// Trains starting from `model`, whose network configuration must match.
pub fn train_from(
    mut model: NgtmModel,
    config: &TrainConfig,
    train_set: &GraphSet,
    val_set: &GraphSet,
) -> Result<TrainOutcome> {
    config.validate()?;
    if model.config() != &config.net {
        return Err(Error::CheckpointMismatch("network configuration differs".into()));
    }
    let train_ex = prepare(train_set, config.net.n_max, config.s_steps)?;
    let val_ex = if val_set.is_empty() {
        train_ex.clone()
    } else {
        prepare(val_set, config.net.n_max, config.s_steps)?
    };
    let mut log = match &config.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(std::io::BufWriter::new(fs::File::create(dir.join(METRICS_LOG))?))
        }
        None => None,
    };
    let emit = |rec: &MetricRecord, log: &mut Option<std::io::BufWriter<fs::File>>| -> Result<()> {
        if let Some(w) = log {
            serde_json::to_writer(&mut *w, rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.lr, model.params().values());
    let mut history = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut step = 0;
    for epoch in 1..=config.epochs {
        let opts = ForwardOptions {
            tau: config.tau(epoch),
            straight_through: config.straight_through,
            weights: config.weights,
        };
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_ex[i]).collect();
            let report = match train_step(&mut model, &mut adam, &batch, &opts, &mut rng) {
                Ok(r) => r,
                Err(Error::NonFinite(_)) => {
                    if let Some(w) = log.as_mut() {
                        w.flush()?;
                    }
                    return Err(Error::NonFiniteLoss { epoch, step });
                }
                Err(e) => return Err(e),
            };
            let rec = MetricRecord::new(step, epoch, "train", &report);
            emit(&rec, &mut log)?;
            history.push(rec);
        }
        if epoch % config.val_every == 0 || epoch == config.epochs {
            let report = evaluate(&model, &val_ex, &opts, config.seed ^ VALIDATION_STREAM);
            let rec = MetricRecord::new(step, epoch, "val", &report);
            emit(&rec, &mut log)?;
            history.push(rec);
            if best.as_ref().is_none_or(|b| report.total < b.val_metric) {
                let ckpt = Checkpoint {
                    version: CHECKPOINT_VERSION,
                    model: model.clone(),
                    config: config.clone(),
                    epoch,
                    val_metric: report.total,
                    seed_state: config.seed,
                };
                if let Some(dir) = &config.checkpoint_dir {
                    ckpt.save(&dir.join(BEST_CHECKPOINT))?;
                }
                best = Some(ckpt);
            }
        }
    }
    if let Some(w) = log.as_mut() {
        w.flush()?;
    }
    let last_metric = history
        .iter()
        .rev()
        .find(|r| r.split == "val")
        .map_or(f64::NAN, |r| r.total);
    let last = Checkpoint {
        version: CHECKPOINT_VERSION,
        model,
        config: config.clone(),
        epoch: config.epochs,
        val_metric: last_metric,
        seed_state: config.seed,
    };
    if let Some(dir) = &config.checkpoint_dir {
        last.save(&dir.join(LAST_CHECKPOINT))?;
    }
    Ok(TrainOutcome {
        best: best.expect("validation runs at the final epoch"),
        last,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_lobster_set, LobsterParams};

    pub(crate) fn tiny_net() -> NetConfig {
        NetConfig {
            k: 2,
            w: 3,
            n_sub: 4,
            n_max: 8,
            latent_dim: 4,
            hidden_dim: 8,
            encoder_layers: 2,
            attention_heads: 2,
            ..NetConfig::default()
        }
    }

    fn tiny_graphs() -> GraphSet {
        let graphs = vec![
            Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap(),
            Graph::from_edges(4, &[(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap(),
            Graph::from_edges(6, &[(0, 1), (0, 2), (0, 3), (3, 4), (4, 5)]).unwrap(),
        ];
        GraphSet::new("tiny", graphs)
    }

    fn opts() -> ForwardOptions {
        ForwardOptions {
            tau: 0.7,
            straight_through: true,
            weights: LossWeights::default(),
        }
    }

    #[test]
    fn gumbel_sample_examples() {
        let (soft, hard) = gumbel_topic_sample(&[1.0 - 1e-9, 1e-9], 1e-3, &[0.0, 3.0]).unwrap();
        assert_eq!(hard, 0);
        assert!((soft.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(matches!(
            gumbel_topic_sample(&[0.7, 0.7], 1.0, &[0.0, 0.0]),
            Err(Error::SimplexViolation(_))
        ));
    }

    #[test]
    fn gumbel_argmax_is_categorical() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let gumbel = Gumbel::new(0.0, 1.0).unwrap();
        let mut counts = [0usize; 2];
        for _ in 0..10_000 {
            let noise: Vec<f64> = (0..2).map(|_| gumbel.sample(&mut rng)).collect();
            counts[gumbel_topic_sample(&[0.7, 0.3], 0.5, &noise).unwrap().1] += 1;
        }
        assert!((counts[0] as f64 / 10_000.0 - 0.7).abs() <= 0.02, "{counts:?}");
    }

    #[test]
    fn tau_schedule_endpoints() {
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        assert_eq!(cfg.tau(1), cfg.gumbel_tau_start);
        assert!((cfg.tau(50) - cfg.gumbel_tau_end).abs() <= 1e-9);
        assert!(cfg.tau(25) < cfg.tau(24));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut cfg = TrainConfig::for_dataset(DatasetName::Ptc, 64);
        cfg.checkpoint_dir = Some(PathBuf::from("runs/ptc"));
        let text = cfg.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&text).unwrap(), cfg);
        let w = cfg.weights;
        assert_eq!([w.alpha, w.beta, w.delta, w.gamma, w.omega], [10.0, 1.0, 1.0, 1.0, 1.0]);
        assert_eq!((cfg.net.k, cfg.net.w, cfg.net.n_sub), (5, 20, 20));
        assert!(TrainConfig::from_toml("lr = -1.0").is_err());
        let partial = TrainConfig::from_toml("epochs = 7\n[net]\nk = 3\n").unwrap();
        assert_eq!((partial.epochs, partial.net.k, partial.net.w), (7, 3, 30));
    }

    #[test]
    fn reconstruction_has_w_steps_and_is_deterministic() {
        let model = NgtmModel::new(tiny_net(), 3).unwrap();
        let g = &tiny_graphs().graphs()[0].clone();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            reconstruct_graph(&model, g, &opts(), 3, 0.5, &mut rng).unwrap()
        };
        let (pred, report, trace) = run(5);
        assert_eq!(trace.steps.len(), 3);
        assert_eq!(trace.final_soft, pred);
        assert_eq!(trace.replay(AssemblyMode::Sequential, assembly::UnionRule::Clamp).unwrap(), pred);
        let (pred2, report2, _) = run(5);
        assert_eq!((pred, report), (pred2, report2));
        let r = objectives::elbo_total(&report, &LossWeights::default()).unwrap();
        assert!((r.total - report.total).abs() <= 1e-6);
    }

    #[test]
    fn disabled_global_encoder_has_zero_kl_g() {
        let cfg = NetConfig {
            use_global_encoder: false,
            ..tiny_net()
        };
        let model = NgtmModel::new(cfg, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, report, trace) = reconstruct_graph(&model, &tiny_graphs().graphs()[1], &opts(), 3, 0.5, &mut rng).unwrap();
        assert_eq!(report.kl_g, 0.0);
        assert!(trace.z_g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_small_step_decreases_loss() {
        let g = &tiny_graphs().graphs()[2].clone();
        let ex = Example::new(g, 8, 3).unwrap();
        let mut failures = 0;
        for seed in 0..10 {
            let mut model = NgtmModel::new(tiny_net(), seed).unwrap();
            let mut adam = Adam::new(1e-5, model.params().values());
            let o = opts();
            let before = evaluate(&model, std::slice::from_ref(&ex), &o, 99);
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            train_step(&mut model, &mut adam, &[&ex], &o, &mut rng).unwrap();
            let after = evaluate(&model, std::slice::from_ref(&ex), &o, 99);
            if after.total >= before.total {
                failures += 1;
            }
        }
        assert!(failures <= 1, "{failures} seeds failed to decrease");
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let model = NgtmModel::new(tiny_net(), 8).unwrap();
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            model,
            config: TrainConfig::default(),
            epoch: 3,
            val_metric: 1.25,
            seed_state: 4,
        };
        let path = dir.path().join("x.ckpt");
        ckpt.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.id(), ckpt.id());
        let ex = prepare(&tiny_graphs(), 8, 3).unwrap();
        assert_eq!(evaluate(&ckpt.model, &ex, &opts(), 1), evaluate(&back.model, &ex, &opts(), 1));
    }

    #[test]
    fn training_writes_outputs_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            net: tiny_net(),
            epochs: 4,
            batch_size: 2,
            val_every: 2,
            lr: 1e-2,
            seed: 7,
            checkpoint_dir: Some(dir.path().to_path_buf()),
            ..TrainConfig::default()
        };
        let data = tiny_graphs();
        let out = train(&cfg, &data, &data).unwrap();
        for f in [BEST_CHECKPOINT, LAST_CHECKPOINT, METRICS_LOG] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let log1 = fs::read_to_string(dir.path().join(METRICS_LOG)).unwrap();
        // 2 batches per epoch, plus 2 validation lines.
        assert_eq!(log1.lines().count(), 10);
        let first: serde_json::Value = serde_json::from_str(log1.lines().next().unwrap()).unwrap();
        for key in ["step", "rec", "kl_theta", "kl_g", "kl_topics", "ortho", "total"] {
            assert!(first.get(key).is_some(), "{key}");
        }
        let out2 = train(&cfg, &data, &data).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join(METRICS_LOG)).unwrap(), log1);
        assert_eq!(out.best, out2.best);
        assert!(out.best.val_metric <= out.last.val_metric);
        assert_eq!(Checkpoint::load(&dir.path().join(BEST_CHECKPOINT)).unwrap(), out.best);
    }

    #[test]
    fn oversize_graphs_are_rejected() {
        let set = generate_lobster_set(&LobsterParams::for_average(2, 20, 15, 30, 1)).unwrap();
        let cfg = TrainConfig {
            net: tiny_net(),
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&cfg, &set, &set), Err(Error::OversizeGraph { .. })));
    }
}
