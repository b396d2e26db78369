//! Learnable components: graph encoders with Gaussian heads, the
//! topic-conditioned substructure decoder, the node position encoder, the
//! mapping network, and the learnable topic priors.
//!
//! Each component has a tape-level `forward_*` used by training and
//! generation, and a plain-value wrapper that runs a throwaway tape.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::assembly::{AssemblyMode, UnionRule};
use crate::autograd::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::PaddedGraph;

/// Log-variance heads are clamped to this range before exponentiation.
pub const LOGVAR_RANGE: (f64, f64) = (-10.0, 10.0);
const LAYER_NORM_EPS: f64 = 1e-5;
const DECODER_SLOPE: f64 = 0.2;
/// Per-node input features: constant, log(1 + degree), log(1 + triangles).
pub const NODE_FEATURES: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Number of topics.
    pub k: usize,
    /// Substructures assembled per graph.
    pub w: usize,
    /// Nodes per decoded substructure.
    pub n_sub: usize,
    /// Slots in the assembled graph.
    pub n_max: usize,
    pub latent_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub attention_heads: usize,
    /// `false` gives the variant without a global encoder.
    pub use_global_encoder: bool,
    pub assembly_mode: AssemblyMode,
    pub union_rule: UnionRule,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            k: 10,
            w: 30,
            n_sub: 20,
            n_max: 64,
            latent_dim: 256,
            hidden_dim: 256,
            encoder_layers: 4,
            attention_heads: 4,
            use_global_encoder: true,
            assembly_mode: AssemblyMode::Sequential,
            union_rule: UnionRule::Clamp,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("k", self.k),
            ("w", self.w),
            ("n_sub", self.n_sub),
            ("n_max", self.n_max),
            ("latent_dim", self.latent_dim),
            ("hidden_dim", self.hidden_dim),
            ("encoder_layers", self.encoder_layers),
            ("attention_heads", self.attention_heads),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be positive")));
        }
        if self.n_sub > self.n_max {
            return Err(Error::InvalidConfig("n_sub must not exceed n_max".into()));
        }
        if self.hidden_dim % self.attention_heads != 0 {
            return Err(Error::InvalidConfig(
                "hidden_dim must be divisible by attention_heads".into(),
            ));
        }
        Ok(())
    }
}

/// Diagonal Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianParams {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::ShapeMismatch("mu and sigma lengths differ".into()));
        }
        if sigma.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::NonPositiveSigma);
        }
        if mu.iter().chain(&sigma).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("gaussian parameters".into()));
        }
        Ok(Self { mu, sigma })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mu: vec![0.0; dim],
            sigma: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    fn from_rows(mu: &Matrix, logvar: &Matrix, row: usize) -> Self {
        Self {
            mu: mu.row(row).to_vec(),
            sigma: logvar.row(row).iter().map(|lv| (0.5 * lv).exp()).collect(),
        }
    }
}

/// Learnable topic priors `N(mu^k, sigma^k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopicPriorSet {
    pub priors: Vec<GaussianParams>,
}

impl TopicPriorSet {
    pub fn k(&self) -> usize {
        self.priors.len()
    }

    pub fn means(&self) -> Vec<Vec<f64>> {
        self.priors.iter().map(|p| p.mu.clone()).collect()
    }
}

/// `z = mu + sigma ⊙ noise`.
pub fn reparameterize(p: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != p.dim() {
        return Err(Error::ShapeMismatch(format!(
            "noise has length {} but latent_dim is {}",
            noise.len(),
            p.dim()
        )));
    }
    Ok(p.mu
        .iter()
        .zip(&p.sigma)
        .zip(noise)
        .map(|((m, s), e)| m + s * e)
        .collect())
}

/// Index of the hot entry, or [`Error::NotOneHot`].
pub fn one_hot_index(v: &[f64]) -> Result<usize> {
    let mut hot = None;
    for (i, &x) in v.iter().enumerate() {
        if x == 1.0 {
            if hot.is_some() {
                return Err(Error::NotOneHot);
            }
            hot = Some(i);
        } else if x != 0.0 {
            return Err(Error::NotOneHot);
        }
    }
    hot.ok_or(Error::NotOneHot)
}

pub fn one_hot(k: usize, index: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[index] = 1.0;
    v
}

pub type ParamId = usize;

/// Named parameter tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id]
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Places every parameter on the tape as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        Bound {
            vars: self.values.iter().map(|m| tape.param(m.clone())).collect(),
        }
    }
}

/// Parameters bound to one tape.
pub struct Bound<'t> {
    vars: Vec<Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn var(&self, id: ParamId) -> Var<'t> {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }
}

struct Init<'a> {
    store: &'a mut ParamStore,
    rng: ChaCha8Rng,
}

impl Init<'_> {
    fn uniform(&mut self, name: String, rows: usize, cols: usize, bound: f64) -> ParamId {
        let data = (0..rows * cols)
            .map(|_| self.rng.random_range(-bound..bound))
            .collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Linear {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weight = self.uniform(format!("{name}.weight"), fan_in, fan_out, bound);
        let bias = self.store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out));
        Linear { weight, bias }
    }

    fn layer_norm(&mut self, name: &str, dim: usize) -> LayerNorm {
        LayerNorm {
            gain: self.store.add(format!("{name}.gain"), Matrix::filled(1, dim, 1.0)),
            bias: self.store.add(format!("{name}.bias"), Matrix::zeros(1, dim)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.matmul(p.var(self.weight)).add_row(p.var(self.bias))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerNorm {
    gain: ParamId,
    bias: ParamId,
}

impl LayerNorm {
    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> Var<'t> {
        x.layer_norm_rows(LAYER_NORM_EPS)
            .mul_row(p.var(self.gain))
            .add_row(p.var(self.bias))
    }
}

/// Precomputed per-graph encoder inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderInput {
    /// `D^-1/2 (A + I_mask) D^-1/2`.
    pub a_hat: Matrix,
    pub features: Matrix,
    pub mask_row: Matrix,
    pub n_real: usize,
}

impl EncoderInput {
    pub fn new(g: &PaddedGraph) -> Self {
        let n = g.n_max();
        let a = &g.adjacency;
        let mut with_loops = a.clone();
        for i in 0..n {
            with_loops.set(i, i, g.node_mask[i]);
        }
        let deg: Vec<f64> = (0..n).map(|i| with_loops.row(i).iter().sum()).collect();
        let a_hat = Matrix::from_fn(n, n, |i, j| {
            let d = deg[i] * deg[j];
            if d > 0.0 {
                with_loops.get(i, j) / d.sqrt()
            } else {
                0.0
            }
        });
        let a2 = a.matmul(a);
        let features = Matrix::from_fn(n, NODE_FEATURES, |i, f| {
            let m = g.node_mask[i];
            match f {
                0 => m,
                1 => m * (1.0 + a.row(i).iter().sum::<f64>()).ln(),
                _ => {
                    let tri: f64 = (0..n).map(|j| a2.get(i, j) * a.get(j, i)).sum::<f64>() / 2.0;
                    m * (1.0 + tri).ln()
                }
            }
        });
        Self {
            a_hat,
            features,
            mask_row: g.mask_row(),
            n_real: g.n_real.max(1),
        }
    }
}

/// Gaussian parameters on a tape; `logvar` is already clamped.
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars<'t> {
    pub mu: Var<'t>,
    pub logvar: Var<'t>,
}

impl<'t> GaussianVars<'t> {
    pub fn sigma(&self) -> Var<'t> {
        self.logvar.scale(0.5).exp()
    }

    /// Reparameterized sample with externally supplied standard-normal noise.
    pub fn sample(&self, noise: Var<'t>) -> Var<'t> {
        self.mu.add(self.sigma().mul(noise))
    }

    pub fn to_params(&self) -> Vec<GaussianParams> {
        let (mu, lv) = (self.mu.value(), self.logvar.value());
        (0..mu.rows()).map(|r| GaussianParams::from_rows(&mu, &lv, r)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GaussianHead {
    hidden: Linear,
    mu: Linear,
    logvar: Linear,
}

impl GaussianHead {
    fn forward<'t>(&self, p: &Bound<'t>, x: Var<'t>) -> GaussianVars<'t> {
        let h = self.hidden.forward(p, x).relu();
        GaussianVars {
            mu: self.mu.forward(p, h),
            logvar: self.logvar.forward(p, h).clamp(LOGVAR_RANGE.0, LOGVAR_RANGE.1),
        }
    }
}

/// Graph convolution stack, layer normalization, and masked mean pooling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct GraphEncoder {
    layers: Vec<Linear>,
    norm: LayerNorm,
    head: GaussianHead,
}

impl GraphEncoder {
    fn new(init: &mut Init<'_>, name: &str, cfg: &NetConfig, extra_in: usize, out: usize) -> Self {
        let h = cfg.hidden_dim;
        let layers = (0..cfg.encoder_layers)
            .map(|l| {
                let fan_in = if l == 0 { NODE_FEATURES } else { h };
                init.linear(&format!("{name}.gcn{l}"), fan_in, h)
            })
            .collect();
        Self {
            layers,
            norm: init.layer_norm(&format!("{name}.norm"), h),
            head: GaussianHead {
                hidden: init.linear(&format!("{name}.head.hidden"), h + extra_in, h),
                mu: init.linear(&format!("{name}.head.mu"), h, out),
                logvar: init.linear(&format!("{name}.head.logvar"), h, out),
            },
        }
    }

    /// Graph-level embedding, `1 × hidden_dim`.
    fn embed<'t>(&self, p: &Bound<'t>, input: &EncoderInput, tape: &'t Tape) -> Var<'t> {
        let a_hat = tape.constant(input.a_hat.clone());
        let mut h = tape.constant(input.features.clone());
        for layer in &self.layers {
            let hw = h.matmul(p.var(layer.weight));
            h = a_hat.matmul(hw).add_row(p.var(layer.bias)).relu();
        }
        let h = self.norm.forward(p, h);
        tape.constant(input.mask_row.clone())
            .matmul(h)
            .scale(1.0 / input.n_real as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StructureDecoder {
    l1: Linear,
    l2: Linear,
    l3: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Attention {
    query: Linear,
    key: Linear,
    value: Linear,
    out: Linear,
}

impl Attention {
    fn new(init: &mut Init<'_>, name: &str, dim: usize) -> Self {
        Self {
            query: init.linear(&format!("{name}.query"), dim, dim),
            key: init.linear(&format!("{name}.key"), dim, dim),
            value: init.linear(&format!("{name}.value"), dim, dim),
            out: init.linear(&format!("{name}.out"), dim, dim),
        }
    }

    /// Multi-head scaled dot-product attention of `queries` over `context`.
    fn forward<'t>(&self, p: &Bound<'t>, queries: Var<'t>, context: Var<'t>, heads: usize) -> Var<'t> {
        let q = self.query.forward(p, queries);
        let k = self.key.forward(p, context);
        let v = self.value.forward(p, context);
        let dim = q.shape().1;
        let width = dim / heads;
        let scale = 1.0 / (width as f64).sqrt();
        let mut combined: Option<Var<'t>> = None;
        for head in 0..heads {
            let qh = q.slice_cols(head * width, width);
            let kh = k.slice_cols(head * width, width);
            let vh = v.slice_cols(head * width, width);
            let weights = qh.matmul(kh.t()).scale(scale).softmax_rows();
            let out = weights.matmul(vh);
            combined = Some(match combined {
                None => out,
                Some(prev) => prev.concat_cols(out),
            });
        }
        self.out.forward(p, combined.expect("at least one head"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PositionEncoder {
    substructure_in: Linear,
    graph_in: Linear,
    global_in: Linear,
    substructure_pos: ParamId,
    slot_pos: ParamId,
    self_attention: Attention,
    graph_attention: Attention,
    global_attention: Attention,
    norm: LayerNorm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct MappingNetwork {
    l1: Linear,
    n1: LayerNorm,
    l2: Linear,
    n2: LayerNorm,
    l3: Linear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PriorParams {
    mu: ParamId,
    logvar: ParamId,
}

/// The full set of learnable components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NgtmModel {
    config: NetConfig,
    params: ParamStore,
    topic_encoder: GraphEncoder,
    global_encoder: GraphEncoder,
    structure_encoder: GraphEncoder,
    decoder: StructureDecoder,
    position: PositionEncoder,
    mapping: MappingNetwork,
    priors: PriorParams,
}

impl NgtmModel {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let c = &config;
        let (h, d, k, n_sub, n_max) = (c.hidden_dim, c.latent_dim, c.k, c.n_sub, c.n_max);

        let topic_encoder = GraphEncoder::new(&mut init, "topic_encoder", c, 0, k);
        let global_encoder = GraphEncoder::new(&mut init, "global_encoder", c, 0, d);
        let structure_encoder = GraphEncoder::new(&mut init, "structure_encoder", c, k, d);
        let decoder = StructureDecoder {
            l1: init.linear("decoder.l1", d + k, h),
            l2: init.linear("decoder.l2", h, h),
            l3: init.linear("decoder.l3", h, n_sub * n_sub),
        };
        let pos_bound = (3.0 / h as f64).sqrt();
        let position = PositionEncoder {
            substructure_in: init.linear("position.substructure_in", n_sub, h),
            graph_in: init.linear("position.graph_in", n_max, h),
            global_in: init.linear("position.global_in", d, h),
            substructure_pos: init.uniform("position.substructure_pos".into(), n_sub, h, pos_bound),
            slot_pos: init.uniform("position.slot_pos".into(), n_max, h, pos_bound),
            self_attention: Attention::new(&mut init, "position.self_attention", h),
            graph_attention: Attention::new(&mut init, "position.graph_attention", h),
            global_attention: Attention::new(&mut init, "position.global_attention", h),
            norm: init.layer_norm("position.norm", h),
        };
        let mapping = MappingNetwork {
            l1: init.linear("mapping.l1", h, h),
            n1: init.layer_norm("mapping.n1", h),
            l2: init.linear("mapping.l2", h, h),
            n2: init.layer_norm("mapping.n2", h),
            l3: init.linear("mapping.l3", h, n_max),
        };
        let priors = PriorParams {
            mu: init.uniform("priors.mu".into(), k, d, 1.0),
            logvar: params_zeros(&mut init, "priors.logvar", k, d),
        };
        Ok(Self {
            config,
            params,
            topic_encoder,
            global_encoder,
            structure_encoder,
            decoder,
            position,
            mapping,
            priors,
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Bound<'t> {
        self.params.bind(tape)
    }

    // ---- tape-level forward passes ----

    /// Posterior over `z^θ`, `1 × K`.
    pub fn forward_topic<'t>(&self, p: &Bound<'t>, tape: &'t Tape, x: &EncoderInput) -> GaussianVars<'t> {
        let e = self.topic_encoder.embed(p, x, tape);
        self.topic_encoder.head.forward(p, e)
    }

    /// Posterior over `z^g`, `1 × latent_dim`.
    pub fn forward_global<'t>(&self, p: &Bound<'t>, tape: &'t Tape, x: &EncoderInput) -> GaussianVars<'t> {
        let e = self.global_encoder.embed(p, x, tape);
        self.global_encoder.head.forward(p, e)
    }

    /// Posteriors over `z^k` for the given topic rows (`r × K` one-hots).
    pub fn forward_structure<'t>(
        &self,
        p: &Bound<'t>,
        tape: &'t Tape,
        x: &EncoderInput,
        topics: &Matrix,
    ) -> GaussianVars<'t> {
        let e = self.structure_encoder.embed(p, x, tape);
        let joined = e.repeat_rows(topics.rows()).concat_cols(tape.constant(topics.clone()));
        self.structure_encoder.head.forward(p, joined)
    }

    /// Soft substructure adjacency from `z ⊕ o`, both `1 × ·` rows.
    pub fn forward_decode<'t>(&self, p: &Bound<'t>, tape: &'t Tape, z: Var<'t>, topic: Var<'t>) -> Var<'t> {
        let n = self.config.n_sub;
        let d = &self.decoder;
        let h = d.l1.forward(p, z.concat_cols(topic)).leaky_relu(DECODER_SLOPE);
        let h = d.l2.forward(p, h).leaky_relu(DECODER_SLOPE);
        let raw = d.l3.forward(p, h).sigmoid().reshape(n, n);
        raw.add(raw.t())
            .scale(0.5)
            .mul(tape.constant(Matrix::off_diagonal_ones(n)))
    }

    /// Node position encoding of a substructure against the current graph and
    /// the global vector, `n_sub × hidden_dim`.
    pub fn forward_position<'t>(
        &self,
        p: &Bound<'t>,
        substructure: Var<'t>,
        graph_state: Var<'t>,
        z_g: Var<'t>,
    ) -> Var<'t> {
        let pe = &self.position;
        let heads = self.config.attention_heads;
        let sub = pe.substructure_in.forward(p, substructure).add(p.var(pe.substructure_pos));
        let slots = pe.graph_in.forward(p, graph_state).add(p.var(pe.slot_pos));
        let mut total = sub
            .add(pe.self_attention.forward(p, sub, sub, heads))
            .add(pe.graph_attention.forward(p, sub, slots, heads));
        if self.config.use_global_encoder {
            let global = pe.global_in.forward(p, z_g);
            total = total.add(pe.global_attention.forward(p, sub, global, heads));
        }
        pe.norm.forward(p, total)
    }

    /// Row-stochastic mapping from substructure nodes to graph slots.
    pub fn forward_mapping<'t>(&self, p: &Bound<'t>, position: Var<'t>) -> Var<'t> {
        let m = &self.mapping;
        let h = m.n1.forward(p, m.l1.forward(p, position)).relu();
        let h = m.n2.forward(p, m.l2.forward(p, h)).relu();
        m.l3.forward(p, h).softmax_rows()
    }

    /// Learnable topic priors, `K × latent_dim` each.
    pub fn forward_priors<'t>(&self, p: &Bound<'t>) -> GaussianVars<'t> {
        GaussianVars {
            mu: p.var(self.priors.mu),
            logvar: p.var(self.priors.logvar).clamp(LOGVAR_RANGE.0, LOGVAR_RANGE.1),
        }
    }

    // ---- plain-value wrappers ----

    pub fn encode_topic(&self, g: &PaddedGraph) -> GaussianParams {
        let tape = Tape::new();
        let p = self.bind(&tape);
        self.forward_topic(&p, &tape, &EncoderInput::new(g)).to_params().remove(0)
    }

    pub fn encode_global(&self, g: &PaddedGraph) -> GaussianParams {
        let tape = Tape::new();
        let p = self.bind(&tape);
        self.forward_global(&p, &tape, &EncoderInput::new(g)).to_params().remove(0)
    }

    pub fn encode_structure(&self, g: &PaddedGraph, topic_onehot: &[f64]) -> Result<GaussianParams> {
        if topic_onehot.len() != self.config.k {
            return Err(Error::NotOneHot);
        }
        one_hot_index(topic_onehot)?;
        let tape = Tape::new();
        let p = self.bind(&tape);
        let topics = Matrix::row_vector(topic_onehot.to_vec());
        Ok(self
            .forward_structure(&p, &tape, &EncoderInput::new(g), &topics)
            .to_params()
            .remove(0))
    }

    pub fn decode_substructure(&self, z: &[f64], topic_onehot: &[f64]) -> Result<Matrix> {
        if z.len() != self.config.latent_dim {
            return Err(Error::ShapeMismatch("latent vector length".into()));
        }
        if topic_onehot.len() != self.config.k {
            return Err(Error::NotOneHot);
        }
        one_hot_index(topic_onehot)?;
        let tape = Tape::new();
        let p = self.bind(&tape);
        let z = tape.constant(Matrix::row_vector(z.to_vec()));
        let o = tape.constant(Matrix::row_vector(topic_onehot.to_vec()));
        Ok(self.forward_decode(&p, &tape, z, o).value())
    }

    pub fn position_encode(&self, substructure: &Matrix, graph_state: &Matrix, z_g: &[f64]) -> Result<Matrix> {
        let c = &self.config;
        if substructure.shape() != (c.n_sub, c.n_sub)
            || graph_state.shape() != (c.n_max, c.n_max)
            || z_g.len() != c.latent_dim
        {
            return Err(Error::ShapeMismatch("position encoder inputs".into()));
        }
        let tape = Tape::new();
        let p = self.bind(&tape);
        Ok(self
            .forward_position(
                &p,
                tape.constant(substructure.clone()),
                tape.constant(graph_state.clone()),
                tape.constant(Matrix::row_vector(z_g.to_vec())),
            )
            .value())
    }

    pub fn map_nodes(&self, position: &Matrix) -> Result<Matrix> {
        if position.shape() != (self.config.n_sub, self.config.hidden_dim) {
            return Err(Error::ShapeMismatch("position encoding".into()));
        }
        let tape = Tape::new();
        let p = self.bind(&tape);
        Ok(self.forward_mapping(&p, tape.constant(position.clone())).value())
    }

    pub fn topic_priors(&self) -> TopicPriorSet {
        let mu = self.params.get(self.priors.mu);
        let lv = self
            .params
            .get(self.priors.logvar)
            .map(|v| v.clamp(LOGVAR_RANGE.0, LOGVAR_RANGE.1));
        TopicPriorSet {
            priors: (0..self.config.k)
                .map(|r| GaussianParams::from_rows(mu, &lv, r))
                .collect(),
        }
    }

    /// Contribution of the global-attention branch for the given inputs;
    /// identically zero when the global encoder is disabled.
    pub fn global_attention_contribution(&self, substructure: &Matrix, z_g: &[f64]) -> Matrix {
        let c = &self.config;
        if !c.use_global_encoder {
            return Matrix::zeros(c.n_sub, c.hidden_dim);
        }
        let tape = Tape::new();
        let p = self.bind(&tape);
        let pe = &self.position;
        let sub = pe
            .substructure_in
            .forward(&p, tape.constant(substructure.clone()))
            .add(p.var(pe.substructure_pos));
        let global = pe
            .global_in
            .forward(&p, tape.constant(Matrix::row_vector(z_g.to_vec())));
        pe.global_attention.forward(&p, sub, global, c.attention_heads).value()
    }
}

fn params_zeros(init: &mut Init<'_>, name: &str, rows: usize, cols: usize) -> ParamId {
    init.store.add(name, Matrix::zeros(rows, cols))
}

/// Row-wise softmax of a single logit row.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    Matrix::row_vector(logits.to_vec()).softmax_rows().into_vec()
}
