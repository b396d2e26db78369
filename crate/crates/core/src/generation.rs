//! Sampling graphs from a trained model, topic manipulation, and the sweep
//! protocols.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::assembly::{self, AssemblyMode, AssemblyStep, GenerationTrace, UnionRule};
use crate::autograd::{Matrix, Tape};
use crate::error::{Error, Result};
use crate::eval::{cohens_d, ClassifierProbe};
use crate::graph::{structural_profile, Graph, PROFILE_COLUMNS};
use crate::net::{one_hot, softmax, NgtmModel};
use crate::objectives::check_simplex;

pub const DEFAULT_DELTAS: [f64; 6] = [-0.30, -0.15, 0.0, 0.15, 0.30, 0.45];
pub const DEFAULT_PER_SETTING: usize = 300;
pub const DOMINANCE_STEP: f64 = 0.05;
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Exact categorical draw from one uniform variate.
pub fn sample_topic<R: Rng + ?Sized>(theta: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (k, t) in theta.iter().enumerate() {
        acc += t;
        if u < acc {
            return k;
        }
    }
    theta.iter().rposition(|t| *t > 0.0).unwrap_or(0)
}

/// Shifts `theta[topic]` by `delta`, clamped to `[0, 1]`, and rescales the
/// other weights to keep the total at one.
pub fn manipulate_topic(theta: &[f64], topic: usize, delta: f64) -> Result<Vec<f64>> {
    check_simplex(theta)?;
    if topic >= theta.len() {
        return Err(Error::InvalidTopic { topic, k: theta.len() });
    }
    if !delta.is_finite() {
        return Err(Error::NonFinite("topic shift".into()));
    }
    set_weight(theta, topic, (theta[topic] + delta).clamp(0.0, 1.0))
}

/// Sets `theta[topic]` to `weight` and rescales the others proportionally.
pub fn set_topic_weight(theta: &[f64], topic: usize, weight: f64) -> Result<Vec<f64>> {
    check_simplex(theta)?;
    if topic >= theta.len() {
        return Err(Error::InvalidTopic { topic, k: theta.len() });
    }
    if !(0.0..=1.0).contains(&weight) {
        return Err(Error::SimplexViolation(format!("topic weight {weight}")));
    }
    set_weight(theta, topic, weight)
}

fn set_weight(theta: &[f64], topic: usize, weight: f64) -> Result<Vec<f64>> {
    if weight == theta[topic] {
        return Ok(theta.to_vec());
    }
    let k = theta.len();
    let residual = 1.0 - weight;
    let rest = 1.0 - theta[topic];
    let mut out: Vec<f64> = if k == 1 {
        vec![1.0]
    } else if rest <= 0.0 {
        (0..k).map(|i| if i == topic { weight } else { residual / (k - 1) as f64 }).collect()
    } else {
        let scale = residual / rest;
        theta
            .iter()
            .enumerate()
            .map(|(i, &t)| if i == topic { weight } else { t.max(0.0) * scale })
            .collect()
    };
    if k == 1 {
        return Ok(out);
    }
    // Rounding of the rescaled entries is absorbed by the manipulated topic.
    let others: f64 = out.iter().enumerate().filter(|(i, _)| *i != topic).map(|(_, v)| v).sum();
    out[topic] = (1.0 - others).clamp(0.0, 1.0);
    Ok(out)
}

/// Draws graphs from a model.
#[derive(Clone, Copy, Debug)]
pub struct Generator<'m> {
    model: &'m NgtmModel,
    threshold: f64,
}

impl<'m> Generator<'m> {
    pub fn new(model: &'m NgtmModel, threshold: f64) -> Self {
        Self { model, threshold }
    }

    pub fn model(&self) -> &'m NgtmModel {
        self.model
    }

    /// `θ = softmax(z^θ)` and `z^g`, both from standard normals. `z^g` is
    /// zero when the global encoder is disabled; its draws are consumed
    /// either way.
    pub fn sample_prior_mixture<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
        let cfg = self.model.config();
        let theta = softmax(&normals(cfg.k, rng));
        let z_g = normals(cfg.latent_dim, rng);
        if cfg.use_global_encoder {
            (theta, z_g)
        } else {
            (theta, vec![0.0; cfg.latent_dim])
        }
    }

    pub fn generate<R: Rng + ?Sized>(
        &self,
        theta: Option<&[f64]>,
        z_g: Option<&[f64]>,
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<(Graph, GenerationTrace)>> {
        (0..count).map(|_| self.generate_one(theta, z_g, rng)).collect()
    }

    pub fn generate_one<R: Rng + ?Sized>(
        &self,
        theta: Option<&[f64]>,
        z_g: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<(Graph, GenerationTrace)> {
        let cfg = self.model.config();
        if let Some(t) = theta {
            if t.len() != cfg.k {
                return Err(Error::SimplexViolation(format!("expected {} topic weights, got {}", cfg.k, t.len())));
            }
            check_simplex(t)?;
        }
        if z_g.is_some_and(|z| z.len() != cfg.latent_dim) {
            return Err(Error::ShapeMismatch("global vector length".into()));
        }
        let (theta, z_g) = match (theta, z_g) {
            (Some(t), Some(z)) => (t.to_vec(), z.to_vec()),
            (t, z) => {
                let (st, sz) = self.sample_prior_mixture(rng);
                (t.map_or(st, <[f64]>::to_vec), z.map_or(sz, <[f64]>::to_vec))
            }
        };
        let z_g = if cfg.use_global_encoder { z_g } else { vec![0.0; cfg.latent_dim] };

        let priors = self.model.topic_priors();
        let tape = Tape::new();
        let p = self.model.bind(&tape);
        let z_g_var = tape.constant(Matrix::row_vector(z_g.clone()));
        let empty = Matrix::zeros(cfg.n_max, cfg.n_max);
        let mut graph = empty.clone();
        let mut topics = Vec::with_capacity(cfg.w);
        let mut subs = Vec::with_capacity(cfg.w);
        let mut maps = Vec::with_capacity(cfg.w);
        for _ in 0..cfg.w {
            let c = sample_topic(&theta, rng);
            let prior = &priors.priors[c];
            let z: Vec<f64> = normals(cfg.latent_dim, rng)
                .iter()
                .zip(prior.mu.iter().zip(&prior.sigma))
                .map(|(e, (m, s))| m + s * e)
                .collect();
            let sub = self.model.forward_decode(
                &p,
                &tape,
                tape.constant(Matrix::row_vector(z)),
                tape.constant(Matrix::row_vector(one_hot(cfg.k, c))),
            );
            let context = match cfg.assembly_mode {
                AssemblyMode::Sequential => &graph,
                AssemblyMode::Parallel => &empty,
            };
            let position = self.model.forward_position(&p, sub, tape.constant(context.clone()), z_g_var);
            let mapping = self.model.forward_mapping(&p, position).value();
            let sub = sub.value();
            if cfg.assembly_mode == AssemblyMode::Sequential {
                graph = assembly::assemble_step_with(&graph, &sub, &mapping, cfg.union_rule)?;
            }
            topics.push(c);
            subs.push(sub);
            maps.push(mapping);
        }
        let (final_soft, after) = assembly::run_assembly(&subs, &maps, cfg.assembly_mode, cfg.union_rule)?;
        let steps = topics
            .into_iter()
            .zip(subs.into_iter().zip(maps))
            .zip(after)
            .enumerate()
            .map(|(index, ((topic, (substructure, mapping)), graph_after))| AssemblyStep {
                index,
                topic,
                substructure,
                mapping,
                graph_after,
            })
            .collect();
        let final_graph = assembly::discretize(&final_soft, self.threshold);
        let trace = GenerationTrace {
            theta,
            z_g,
            steps,
            final_soft,
            final_graph: final_graph.clone(),
        };
        Ok((final_graph, trace))
    }

    /// Assembly mode and union rule the traces were produced with.
    pub fn assembly(&self) -> (AssemblyMode, UnionRule) {
        let cfg = self.model.config();
        (cfg.assembly_mode, cfg.union_rule)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSetting {
    /// Shift for weight sweeps, absolute weight for dominance sweeps.
    pub value: f64,
    pub graphs: usize,
    pub profile_means: [f64; 10],
    /// Per metric against the reference setting; `None` when both settings
    /// are constant and different.
    pub cohens_d: Vec<Option<f64>>,
    pub p_value: Vec<Option<f64>>,
    pub class_probs: Option<Vec<f64>>,
    /// Per-graph structural profiles; not serialized.
    #[serde(skip)]
    pub profiles: Vec<[f64; 10]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub topic: usize,
    pub columns: Vec<String>,
    pub settings: Vec<SweepSetting>,
}

impl SweepReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        PROFILE_COLUMNS.iter().position(|c| *c == name)
    }

    /// Mean of one profile column per setting.
    pub fn means_of(&self, name: &str) -> Vec<f64> {
        let c = self.column(name).expect("known profile column");
        self.settings.iter().map(|s| s.profile_means[c]).collect()
    }
}

/// How the per-graph mixture of one setting is formed from a sampled base.
#[derive(Clone, Copy, Debug)]
enum Adjust {
    Shift(f64),
    Weight(f64),
}

struct SettingRun {
    profiles: Vec<[f64; 10]>,
    class_probs: Option<Vec<f64>>,
}

fn run_setting(
    gen: &Generator<'_>,
    topic: usize,
    adjust: Adjust,
    per_setting: usize,
    seed: u64,
    probe: Option<&ClassifierProbe>,
) -> Result<SettingRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut profiles = Vec::with_capacity(per_setting);
    let mut probs: Option<Vec<f64>> = probe.map(|p| vec![0.0; p.classes().len()]);
    for _ in 0..per_setting {
        let (base, z_g) = gen.sample_prior_mixture(&mut rng);
        let theta = match adjust {
            Adjust::Shift(d) => manipulate_topic(&base, topic, d)?,
            Adjust::Weight(w) => set_topic_weight(&base, topic, w)?,
        };
        let (g, _) = gen.generate_one(Some(&theta), Some(&z_g), &mut rng)?;
        profiles.push(structural_profile(&g).to_vec());
        if let (Some(acc), Some(p)) = (probs.as_mut(), probe) {
            for (a, v) in acc.iter_mut().zip(p.classify(&g)) {
                *a += v;
            }
        }
    }
    if let Some(acc) = probs.as_mut() {
        acc.iter_mut().for_each(|a| *a /= per_setting.max(1) as f64);
    }
    Ok(SettingRun {
        profiles,
        class_probs: probs,
    })
}

fn column(profiles: &[[f64; 10]], c: usize) -> Vec<f64> {
    profiles.iter().map(|p| p[c]).collect()
}

/// Called with `(finished settings, total settings)` as settings complete.
pub type Progress<'a> = &'a (dyn Fn(usize, usize) + Sync);

#[allow(clippy::too_many_arguments)]
fn sweep(
    gen: &Generator<'_>,
    topic: usize,
    values: &[f64],
    adjusts: Vec<Adjust>,
    reference: usize,
    per_setting: usize,
    seed: u64,
    probe: Option<&ClassifierProbe>,
    progress: Progress<'_>,
) -> Result<SweepReport> {
    let k = gen.model().config().k;
    if topic >= k {
        return Err(Error::InvalidTopic { topic, k });
    }
    if per_setting < 2 {
        return Err(Error::TooFewSamples { k: 2, got: per_setting });
    }
    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let seeds: Vec<u64> = adjusts.iter().map(|_| seeder.random()).collect();
    let done = AtomicUsize::new(0);
    let total = adjusts.len();
    let runs: Vec<Result<SettingRun>> = thread::scope(|s| {
        let done = &done;
        let handles: Vec<_> = adjusts
            .iter()
            .zip(&seeds)
            .map(|(a, seed)| {
                s.spawn(move || {
                    let run = run_setting(gen, topic, *a, per_setting, *seed, probe);
                    progress(done.fetch_add(1, Ordering::SeqCst) + 1, total);
                    run
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;

    let base = &runs[reference].profiles;
    let settings = values
        .iter()
        .zip(runs.iter())
        .map(|(&value, run)| {
            let mut means = [0.0; 10];
            let mut ds = Vec::with_capacity(10);
            let mut ps = Vec::with_capacity(10);
            for (c, mean) in means.iter_mut().enumerate() {
                let col = column(&run.profiles, c);
                *mean = col.iter().sum::<f64>() / col.len() as f64;
                match cohens_d(&col, &column(base, c)) {
                    Ok((d, p)) => {
                        ds.push(Some(d));
                        ps.push(Some(p));
                    }
                    Err(Error::DegenerateVariance) => {
                        ds.push(None);
                        ps.push(None);
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok(SweepSetting {
                value,
                graphs: run.profiles.len(),
                profile_means: means,
                cohens_d: ds,
                p_value: ps,
                class_probs: run.class_probs.clone(),
                profiles: run.profiles.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        topic,
        columns: PROFILE_COLUMNS.iter().map(|c| (*c).to_string()).collect(),
        settings,
    })
}

/// Shifts the topic's weight by each delta on per-graph sampled mixtures.
/// Effect sizes are against the zero-shift setting, or the first setting
/// when zero is not in the list.
pub fn sweep_topic_weight(
    gen: &Generator<'_>,
    topic: usize,
    deltas: &[f64],
    per_setting: usize,
    seed: u64,
) -> Result<SweepReport> {
    sweep_topic_weight_with_progress(gen, topic, deltas, per_setting, seed, &|_, _| {})
}

pub fn sweep_topic_weight_with_progress(
    gen: &Generator<'_>,
    topic: usize,
    deltas: &[f64],
    per_setting: usize,
    seed: u64,
    progress: Progress<'_>,
) -> Result<SweepReport> {
    let mut deltas = sorted(deltas)?;
    deltas.dedup();
    let reference = deltas.iter().position(|d| *d == 0.0).unwrap_or(0);
    let adjusts = deltas.iter().map(|d| Adjust::Shift(*d)).collect();
    sweep(gen, topic, &deltas, adjusts, reference, per_setting, seed, None, progress)
}

/// Sets the topic's weight to each value, rescaling the sampled remainder.
/// Effect sizes are against the first (smallest) weight.
pub fn sweep_topic_weights(
    gen: &Generator<'_>,
    topic: usize,
    weights: &[f64],
    per_setting: usize,
    seed: u64,
    probe: Option<&ClassifierProbe>,
) -> Result<SweepReport> {
    let mut weights = sorted(weights)?;
    weights.dedup();
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::SimplexViolation("sweep weights must lie in [0, 1]".into()));
    }
    let adjusts = weights.iter().map(|w| Adjust::Weight(*w)).collect();
    sweep(gen, topic, &weights, adjusts, 0, per_setting, seed, probe, &|_, _| {})
}

/// Drives the topic from weight 0 to 1 in steps of 0.05, scoring each setting
/// with the probe.
pub fn sweep_topic_to_dominance(
    gen: &Generator<'_>,
    topic: usize,
    per_setting: usize,
    seed: u64,
    probe: &ClassifierProbe,
) -> Result<SweepReport> {
    sweep_topic_weights(gen, topic, &dominance_grid(), per_setting, seed, Some(probe))
}

pub fn dominance_grid() -> Vec<f64> {
    let steps = (1.0 / DOMINANCE_STEP).round() as usize;
    (0..=steps).map(|i| i as f64 / steps as f64).collect()
}

fn sorted(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptySequence);
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("sweep values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}
