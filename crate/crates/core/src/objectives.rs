//! Loss terms: KL divergences, topic-weighted substructure KL, micro and macro
//! reconstruction, orthogonality of topic centres, and their weighted total.
//!
//! Reconstruction terms are written once against the tape; the plain-value
//! versions evaluate the same graph on constants.

use serde::{Deserialize, Serialize};

use crate::autograd::{Matrix, Tape, Var};
use crate::data::DatasetName;
use crate::error::{Error, Result};
use crate::graph::PaddedGraph;
use crate::net::{GaussianParams, TopicPriorSet};

/// Probability clamp in the cross-entropy.
pub const BCE_EPS: f64 = 1e-7;
/// Self-loop mass added before row-normalizing the soft adjacency.
pub const TRANSITION_EPS: f64 = 1e-4;
/// Default number of transition powers compared by the macro loss.
pub const DEFAULT_S_STEPS: usize = 3;
const SIMPLEX_TOL: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma: f64,
    pub omega: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::uniform(1.0)
    }
}

impl LossWeights {
    pub fn uniform(v: f64) -> Self {
        Self {
            alpha: v,
            beta: v,
            delta: v,
            gamma: v,
            omega: v,
        }
    }

    /// Per-dataset loss weights.
    pub fn for_dataset(name: DatasetName) -> Self {
        let (alpha, beta, delta, gamma, omega) = match name {
            DatasetName::Mutag => (80.0, 90.0, 15.0, 10.0, 10.0),
            DatasetName::Lobster => (20.0, 10.0, 0.5, 1.0, 1.5),
            DatasetName::Ptc => (10.0, 1.0, 1.0, 1.0, 1.0),
            DatasetName::OgbgMolbbbp => (200.0, 50.0, 5.0, 4.0, 5.0),
        };
        Self {
            alpha,
            beta,
            delta,
            gamma,
            omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.alpha, self.beta, self.delta, self.gamma, self.omega];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig("loss weights must be finite and non-negative".into()));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidConfig("at least one loss weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec: f64,
    pub kl_theta: f64,
    pub kl_g: f64,
    pub kl_topics: f64,
    pub ortho: f64,
    pub total: f64,
}

impl LossReport {
    /// Component-wise mean over reports, total included.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        let n = reports.len().max(1) as f64;
        let mut out = LossReport::default();
        for r in reports {
            out.rec += r.rec / n;
            out.kl_theta += r.kl_theta / n;
            out.kl_g += r.kl_g / n;
            out.kl_topics += r.kl_topics / n;
            out.ortho += r.ortho / n;
            out.total += r.total / n;
        }
        out
    }
}

/// Weighted total of the components.
pub fn elbo_total(c: &LossReport, w: &LossWeights) -> Result<LossReport> {
    let parts = [c.rec, c.kl_theta, c.kl_g, c.kl_topics, c.ortho];
    if parts.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("loss components".into()));
    }
    Ok(LossReport {
        total: w.alpha * c.rec
            + w.beta * c.kl_theta
            + w.delta * c.kl_g
            + w.gamma * c.kl_topics
            + w.omega * c.ortho,
        ..*c
    })
}

fn check_sigma(p: &GaussianParams) -> Result<()> {
    if p.sigma.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::NonPositiveSigma);
    }
    Ok(())
}

pub fn kl_standard_normal(q: &GaussianParams) -> Result<f64> {
    check_sigma(q)?;
    Ok(q.mu
        .iter()
        .zip(&q.sigma)
        .map(|(m, s)| {
            let var = s * s;
            0.5 * (m * m + var - 1.0 - var.ln())
        })
        .sum())
}

/// `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_gaussian(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    check_sigma(q)?;
    check_sigma(p)?;
    if q.dim() != p.dim() {
        return Err(Error::ShapeMismatch("gaussian dimensions differ".into()));
    }
    Ok((0..q.dim())
        .map(|d| {
            let (vq, vp) = (q.sigma[d] * q.sigma[d], p.sigma[d] * p.sigma[d]);
            let diff = q.mu[d] - p.mu[d];
            0.5 * ((vq + diff * diff) / vp - 1.0 + (vp / vq).ln())
        })
        .sum())
}

pub fn check_simplex(theta: &[f64]) -> Result<()> {
    let sum: f64 = theta.iter().sum();
    if theta.iter().any(|t| !t.is_finite() || *t < -SIMPLEX_TOL) || (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::SimplexViolation(format!("entries sum to {sum}")));
    }
    Ok(())
}

/// `Σ_k θ_k · KL(q_k ‖ p_k)`.
pub fn topic_kl(theta: &[f64], posteriors: &[GaussianParams], priors: &TopicPriorSet) -> Result<f64> {
    if theta.len() != posteriors.len() || theta.len() != priors.k() {
        return Err(Error::ShapeMismatch("topic counts differ".into()));
    }
    check_simplex(theta)?;
    let mut total = 0.0;
    for ((t, q), p) in theta.iter().zip(posteriors).zip(&priors.priors) {
        total += t * kl_gaussian(q, p)?;
    }
    Ok(total)
}

/// Sum over ordered pairs `i ≠ j` of squared dot products.
pub fn ortho_loss(means: &[Vec<f64>]) -> Result<f64> {
    if means.windows(2).any(|w| w[0].len() != w[1].len()) {
        return Err(Error::ShapeMismatch("topic means differ in dimension".into()));
    }
    let mut total = 0.0;
    for (i, a) in means.iter().enumerate() {
        for (j, b) in means.iter().enumerate() {
            if i != j {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                total += dot * dot;
            }
        }
    }
    Ok(total)
}

// ---- tape versions ----

/// `KL(N(mu, e^logvar) ‖ N(0, I))` summed over all entries.
pub fn kl_standard_normal_var<'t>(mu: Var<'t>, logvar: Var<'t>) -> Var<'t> {
    mu.square()
        .add(logvar.exp())
        .sub(logvar)
        .add_scalar(-1.0)
        .sum()
        .scale(0.5)
}

/// Row-wise `KL(q_r ‖ p_r)`, `r × 1`.
pub fn kl_gaussian_rows<'t>(mu_q: Var<'t>, lv_q: Var<'t>, mu_p: Var<'t>, lv_p: Var<'t>) -> Var<'t> {
    let inv_vp = lv_p.scale(-1.0).exp();
    lv_q.exp()
        .add(mu_q.sub(mu_p).square())
        .mul(inv_vp)
        .add(lv_p)
        .sub(lv_q)
        .add_scalar(-1.0)
        .sum_rows()
        .scale(0.5)
}

/// `θ · KL_rows`, with `theta` `1 × K`.
pub fn topic_kl_var<'t>(theta: Var<'t>, mu_q: Var<'t>, lv_q: Var<'t>, mu_p: Var<'t>, lv_p: Var<'t>) -> Var<'t> {
    theta.matmul(kl_gaussian_rows(mu_q, lv_q, mu_p, lv_p))
}

pub fn ortho_loss_var<'t>(means: Var<'t>) -> Var<'t> {
    let k = means.shape().0;
    let off = means.tape().constant(Matrix::off_diagonal_ones(k));
    means.matmul(means.t()).mul(off).square().sum()
}

/// Target-side statistics for the reconstruction loss, computed once per graph.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconTarget {
    pub adjacency: Matrix,
    /// Real-node pairs above the diagonal, normalized to sum to one.
    pub pair_weights: Matrix,
    /// Padded degrees in decreasing order, `N_max × 1`.
    pub degrees: Matrix,
    pub triangles: f64,
    /// Sorted return probabilities of each transition power, `N_max × 1`.
    pub return_probs: Vec<Matrix>,
    pub pair_mask: Matrix,
}

impl ReconTarget {
    pub fn new(target: &PaddedGraph, s_steps: usize) -> Self {
        let n = target.n_max();
        let pair_mask = target.pair_mask();
        let real = target.n_real;
        let pairs = (real * real.saturating_sub(1) / 2).max(1) as f64;
        let pair_weights = Matrix::from_fn(n, n, |i, j| {
            if i < j && j < n && pair_mask.get(i, j) > 0.0 {
                1.0 / pairs
            } else {
                0.0
            }
        });
        let a = &target.adjacency;
        let mut degrees: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
        degrees.sort_by(|x, y| y.total_cmp(x));
        let a3 = a.matmul(a).matmul(a);
        let triangles = (0..n).map(|i| a3.get(i, i)).sum::<f64>() / 6.0;

        let p = Matrix::from_fn(n, n, |i, j| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                a.get(i, j) / d
            } else {
                f64::from(i == j)
            }
        });
        let mut power = p.clone();
        let mut return_probs = Vec::with_capacity(s_steps);
        for s in 0..s_steps {
            if s > 0 {
                power = power.matmul(&p);
            }
            let mut diag: Vec<f64> = (0..n).map(|i| power.get(i, i)).collect();
            diag.sort_by(|x, y| y.total_cmp(x));
            return_probs.push(Matrix::column_vector(diag));
        }
        Self {
            adjacency: a.clone(),
            pair_weights,
            degrees: Matrix::column_vector(degrees),
            triangles,
            return_probs,
            pair_mask,
        }
    }

    pub fn n_max(&self) -> usize {
        self.adjacency.rows()
    }
}

fn check_pred(pred: (usize, usize), target: &ReconTarget) -> Result<()> {
    let n = target.n_max();
    if pred != (n, n) {
        return Err(Error::ShapeMismatch(format!("prediction {pred:?} against {n}×{n} target")));
    }
    Ok(())
}

/// Mean binary cross-entropy over real-node pairs above the diagonal.
pub fn micro_loss_var<'t>(pred: Var<'t>, target: &ReconTarget) -> Var<'t> {
    let tape = pred.tape();
    let t = tape.constant(target.adjacency.clone());
    let not_t = tape.constant(target.adjacency.map(|v| 1.0 - v));
    let p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS);
    let ll = t.mul(p.ln()).add(not_t.mul(p.scale(-1.0).add_scalar(1.0).ln()));
    ll.mul(tape.constant(target.pair_weights.clone())).sum().scale(-1.0)
}

/// Squared errors of soft degree, triangle and return-probability statistics.
pub fn macro_loss_var<'t>(pred: Var<'t>, target: &ReconTarget) -> Var<'t> {
    let tape = pred.tape();
    let n = target.n_max();
    // Degrees use the unmasked prediction so mass on padded slots is penalized.
    let degree_term = pred
        .sum_rows()
        .sort_desc()
        .sub(tape.constant(target.degrees.clone()))
        .square()
        .sum();

    let masked = pred.mul(tape.constant(target.pair_mask.clone()));
    let triangles = masked.matmul(masked).matmul(masked).diag().sum().scale(1.0 / 6.0);
    let triangle_term = triangles.add_scalar(-target.triangles).square();

    let loops = masked.add(tape.constant(Matrix::identity(n).scale(TRANSITION_EPS)));
    let p = loops.div_col(loops.sum_rows());
    let mut power = p;
    let mut total = degree_term.add(triangle_term);
    for (s, expected) in target.return_probs.iter().enumerate() {
        if s > 0 {
            power = power.matmul(p);
        }
        let term = power
            .diag()
            .sort_desc()
            .sub(tape.constant(expected.clone()))
            .square()
            .sum();
        total = total.add(term);
    }
    total
}

pub fn reconstruction_loss_var<'t>(pred: Var<'t>, target: &ReconTarget) -> Var<'t> {
    micro_loss_var(pred, target).add(macro_loss_var(pred, target))
}

fn eval_on_tape(pred: &Matrix, target: &ReconTarget, f: for<'t> fn(Var<'t>, &ReconTarget) -> Var<'t>) -> Result<f64> {
    check_pred(pred.shape(), target)?;
    let tape = Tape::new();
    let v = f(tape.constant(pred.clone()), target).scalar_value();
    Ok(v)
}

pub fn micro_loss(pred: &Matrix, target: &PaddedGraph) -> Result<f64> {
    eval_on_tape(pred, &ReconTarget::new(target, 0), micro_loss_var)
}

pub fn macro_loss(pred: &Matrix, target: &PaddedGraph, s_steps: usize) -> Result<f64> {
    eval_on_tape(pred, &ReconTarget::new(target, s_steps), macro_loss_var)
}

pub fn reconstruction_loss(pred: &Matrix, target: &PaddedGraph, s_steps: usize) -> Result<f64> {
    eval_on_tape(pred, &ReconTarget::new(target, s_steps), reconstruction_loss_var)
}
