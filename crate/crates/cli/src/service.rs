//! HTTP control service over a frozen checkpoint.

use std::convert::Infallible;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::mpsc;

use ngtm_core::generation::{
    manipulate_topic, sweep_topic_weight_with_progress, Generator, SweepReport, DEFAULT_DELTAS, DEFAULT_PER_SETTING,
};
use ngtm_core::graph::{structural_profile, Graph, StructuralProfile};
use ngtm_core::net::{one_hot, NetConfig};
use ngtm_core::{assembly, Checkpoint, Error, GenerationTrace};

pub const MAX_GENERATE: usize = 64;
pub const MAX_SWEEP_PER_SETTING: usize = 300;
pub const TOPIC_SAMPLES: usize = 3;
/// Seed of the per-topic skeleton samples served by `/topics`.
const TOPIC_SAMPLE_SEED: u64 = 4;

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    checkpoint: Checkpoint,
    id: String,
    counter: AtomicU64,
}

impl AppState {
    pub fn new(checkpoint: Checkpoint) -> Self {
        let id = checkpoint.id();
        Self {
            inner: Arc::new(Inner {
                checkpoint,
                id,
                counter: AtomicU64::new(0),
            }),
        }
    }

    pub fn checkpoint_id(&self) -> &str {
        &self.inner.id
    }

    fn generator(&self) -> Generator<'_> {
        Generator::new(&self.inner.checkpoint.model, self.inner.checkpoint.config.threshold)
    }

    fn net(&self) -> &NetConfig {
        self.inner.checkpoint.model.config()
    }

    /// Request seed when given, otherwise the next value of the request counter.
    fn seed(&self, requested: Option<u64>) -> u64 {
        requested.unwrap_or_else(|| self.inner.counter.fetch_add(1, Ordering::Relaxed))
    }

    fn check_id(&self, requested: Option<&str>) -> Result<(), ApiError> {
        match requested {
            Some(id) if id != self.inner.id => Err(ApiError::from(Error::CheckpointMismatch(format!(
                "request targets {id}, service holds {}",
                self.inner.id
            )))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    kind: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            kind: "bad_request",
            message: message.into(),
        }
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, kind) = match &e {
            Error::SimplexViolation(_) => (StatusCode::BAD_REQUEST, "simplex_violation"),
            Error::InvalidTopic { .. } => (StatusCode::BAD_REQUEST, "invalid_topic"),
            Error::ShapeMismatch(_) | Error::NotOneHot => (StatusCode::BAD_REQUEST, "shape_mismatch"),
            Error::InvalidConfig(_) | Error::NonFinite(_) | Error::EmptySequence | Error::TooFewSamples { .. } => {
                (StatusCode::BAD_REQUEST, "bad_request")
            }
            Error::CheckpointMismatch(_) => (StatusCode::CONFLICT, "checkpoint_mismatch"),
            _ => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        Self {
            status,
            kind,
            message: e.to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = json!({ "error": { "kind": self.kind, "message": self.message } });
        (self.status, Json(body)).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed request: {e}")))
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ApiSession {
    pub checkpoint_id: String,
    pub net: NetConfig,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "W")]
    pub w: usize,
    pub n_sub: usize,
    #[serde(rename = "N_max")]
    pub n_max: usize,
    pub default_theta: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopicSample {
    pub soft: Vec<Vec<f64>>,
    pub graph: Graph,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TopicSummary {
    pub topic: usize,
    pub mu_norm: f64,
    pub sigma_norm: f64,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub samples: Vec<TopicSample>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub theta: Option<Vec<f64>>,
    pub count: usize,
    pub seed: Option<u64>,
    #[serde(default)]
    pub include_trace: bool,
    pub checkpoint_id: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GeneratedGraph {
    pub graph: Graph,
    pub profile: StructuralProfile,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<GenerationTrace>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub seed: u64,
    pub graphs: Vec<GeneratedGraph>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManipulateRequest {
    pub theta: Vec<f64>,
    pub topic: usize,
    pub delta: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ManipulateResponse {
    pub theta: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub topic: usize,
    pub deltas: Option<Vec<f64>>,
    pub per_setting: Option<usize>,
    pub seed: Option<u64>,
    pub checkpoint_id: Option<String>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/session", get(session))
        .route("/topics", get(topics))
        .route("/generate", post(generate))
        .route("/manipulate", post(manipulate))
        .route("/sweep", post(sweep))
        .fallback(|| async {
            ApiError {
                status: StatusCode::NOT_FOUND,
                kind: "not_found",
                message: "unknown route".into(),
            }
        })
        .with_state(state)
}

async fn session(State(state): State<AppState>) -> Json<ApiSession> {
    let net = state.net().clone();
    Json(ApiSession {
        checkpoint_id: state.checkpoint_id().to_string(),
        k: net.k,
        w: net.w,
        n_sub: net.n_sub,
        n_max: net.n_max,
        default_theta: vec![1.0 / net.k as f64; net.k],
        net,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Prior summaries with skeletons decoded from latent draws of each topic.
pub fn topic_summaries(state: &AppState) -> Result<Vec<TopicSummary>, Error> {
    let model = &state.inner.checkpoint.model;
    let threshold = state.inner.checkpoint.config.threshold;
    let net = model.config();
    let mut rng = ChaCha8Rng::seed_from_u64(TOPIC_SAMPLE_SEED);
    model
        .topic_priors()
        .priors
        .iter()
        .enumerate()
        .map(|(k, prior)| {
            let samples = (0..TOPIC_SAMPLES)
                .map(|_| {
                    let eps: Vec<f64> = (0..net.latent_dim)
                        .map(|_| rng.sample(StandardNormal))
                        .collect();
                    let z = ngtm_core::net::reparameterize(prior, &eps)?;
                    let soft = model.decode_substructure(&z, &one_hot(net.k, k))?;
                    Ok(TopicSample {
                        graph: assembly::discretize(&soft, threshold),
                        soft: soft.to_rows(),
                    })
                })
                .collect::<Result<Vec<_>, Error>>()?;
            Ok(TopicSummary {
                topic: k,
                mu_norm: norm(&prior.mu),
                sigma_norm: norm(&prior.sigma),
                mu: prior.mu.clone(),
                sigma: prior.sigma.clone(),
                samples,
            })
        })
        .collect()
}

async fn topics(State(state): State<AppState>) -> Result<Json<Value>, ApiError> {
    let topics = tokio::task::spawn_blocking(move || topic_summaries(&state))
        .await
        .map_err(|e| ApiError::from(Error::InvalidConfig(e.to_string())))??;
    Ok(Json(json!({ "topics": topics })))
}

/// Generation shared by the endpoint and its tests.
pub fn run_generate(state: &AppState, req: &GenerateRequest) -> Result<GenerateResponse, ApiError> {
    state.check_id(req.checkpoint_id.as_deref())?;
    if req.count == 0 || req.count > MAX_GENERATE {
        return Err(ApiError::bad_request(format!("count must be in 1..={MAX_GENERATE}")));
    }
    if let Some(theta) = &req.theta {
        if theta.len() != state.net().k {
            return Err(ApiError::from(Error::SimplexViolation(format!(
                "expected {} topic weights, got {}",
                state.net().k,
                theta.len()
            ))));
        }
    }
    let seed = state.seed(req.seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = state.generator().generate(req.theta.as_deref(), None, req.count, &mut rng)?;
    Ok(GenerateResponse {
        seed,
        graphs: out
            .into_iter()
            .map(|(graph, trace)| GeneratedGraph {
                profile: structural_profile(&graph),
                graph,
                trace: req.include_trace.then_some(trace),
            })
            .collect(),
    })
}

async fn generate(State(state): State<AppState>, body: Bytes) -> Result<Json<GenerateResponse>, ApiError> {
    let req: GenerateRequest = parse(&body)?;
    let out = tokio::task::spawn_blocking(move || run_generate(&state, &req))
        .await
        .map_err(|e| ApiError::from(Error::InvalidConfig(e.to_string())))??;
    Ok(Json(out))
}

async fn manipulate(body: Bytes) -> Result<Json<ManipulateResponse>, ApiError> {
    let req: ManipulateRequest = parse(&body)?;
    Ok(Json(ManipulateResponse {
        theta: manipulate_topic(&req.theta, req.topic, req.delta)?,
    }))
}

fn sweep_args(state: &AppState, req: &SweepRequest) -> Result<(Vec<f64>, usize, u64), ApiError> {
    state.check_id(req.checkpoint_id.as_deref())?;
    let per_setting = req.per_setting.unwrap_or(DEFAULT_PER_SETTING);
    if !(2..=MAX_SWEEP_PER_SETTING).contains(&per_setting) {
        return Err(ApiError::bad_request(format!(
            "per_setting must be in 2..={MAX_SWEEP_PER_SETTING}"
        )));
    }
    let deltas = req.deltas.clone().unwrap_or_else(|| DEFAULT_DELTAS.to_vec());
    Ok((deltas, per_setting, state.seed(req.seed)))
}

fn wants_events(headers: &HeaderMap) -> bool {
    headers
        .get(header::ACCEPT)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.contains("text/event-stream"))
}

enum SweepMessage {
    Progress(usize, usize),
    Done(Result<SweepReport, Error>),
}

/// JSON report by default; with `Accept: text/event-stream`, `progress`
/// events per finished setting followed by one `report` or `error` event.
async fn sweep(State(state): State<AppState>, headers: HeaderMap, body: Bytes) -> Result<Response, ApiError> {
    let req: SweepRequest = parse(&body)?;
    let (deltas, per_setting, seed) = sweep_args(&state, &req)?;
    let topic = req.topic;
    if topic >= state.net().k {
        return Err(Error::InvalidTopic { topic, k: state.net().k }.into());
    }
    if !wants_events(&headers) {
        let report = tokio::task::spawn_blocking(move || {
            sweep_topic_weight_with_progress(&state.generator(), topic, &deltas, per_setting, seed, &|_, _| {})
        })
        .await
        .map_err(|e| ApiError::from(Error::InvalidConfig(e.to_string())))??;
        return Ok(Json(report).into_response());
    }

    let (tx, rx) = mpsc::unbounded_channel();
    tokio::task::spawn_blocking(move || {
        let progress_tx = tx.clone();
        let notify = move |done: usize, total: usize| {
            let _ = progress_tx.send(SweepMessage::Progress(done, total));
        };
        let result = sweep_topic_weight_with_progress(&state.generator(), topic, &deltas, per_setting, seed, &notify);
        let _ = tx.send(SweepMessage::Done(result));
    });
    Ok(Sse::new(event_stream(rx)).into_response())
}

fn event_stream(rx: mpsc::UnboundedReceiver<SweepMessage>) -> impl Stream<Item = Result<Event, Infallible>> {
    stream::unfold(Some(rx), |rx| async move {
        let mut rx = rx?;
        let event = match rx.recv().await? {
            SweepMessage::Progress(done, total) => {
                Event::default().event("progress").data(json!({ "done": done, "total": total }).to_string())
            }
            SweepMessage::Done(Ok(report)) => {
                let data = serde_json::to_string(&report).unwrap_or_else(|e| json!({ "error": e.to_string() }).to_string());
                return Some((Ok(Event::default().event("report").data(data)), None));
            }
            SweepMessage::Done(Err(e)) => {
                let data = json!({ "error": { "message": e.to_string() } }).to_string();
                return Some((Ok(Event::default().event("error").data(data)), None));
            }
        };
        Some((Ok(event), Some(rx)))
    })
}
