mod common;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use http_body_util::BodyExt;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use ngtm_cli::service::{router, AppState, ApiSession};
use ngtm_core::generation::{manipulate_topic, Generator};

fn app(k: usize) -> (axum::Router, AppState) {
    let state = AppState::new(common::tiny_checkpoint(k));
    (router(state.clone()), state)
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header(header::CONTENT_TYPE, "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn as_json(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_and_unknown_route() {
    let (app, _) = app(2);
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!((status, body.as_slice()), (StatusCode::OK, b"ok".as_slice()));
    let (status, body) = call(&app, "GET", "/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(as_json(&body)["error"]["kind"], "not_found");
}

#[tokio::test]
async fn session_matches_checkpoint() {
    let (app, state) = app(5);
    let (status, body) = call(&app, "GET", "/session", None).await;
    assert_eq!(status, StatusCode::OK);
    let session: ApiSession = serde_json::from_slice(&body).unwrap();
    let ckpt = common::tiny_checkpoint(5);
    assert_eq!(session.checkpoint_id, state.checkpoint_id());
    assert_eq!(session.checkpoint_id, ckpt.id());
    assert_eq!(session.net, *ckpt.model.config());
    assert_eq!((session.k, session.w, session.n_sub, session.n_max), (5, 3, 4, 8));
    assert_eq!(session.default_theta, vec![0.2; 5]);
}

#[tokio::test]
async fn topics_have_three_samples_each() {
    let (app, _) = app(3);
    let (status, body) = call(&app, "GET", "/topics", None).await;
    assert_eq!(status, StatusCode::OK);
    let topics = as_json(&body)["topics"].as_array().unwrap().clone();
    assert_eq!(topics.len(), 3);
    for t in &topics {
        assert_eq!(t["samples"].as_array().unwrap().len(), 3);
        assert!(t["sigma_norm"].as_f64().unwrap() > 0.0);
    }
}

#[tokio::test]
async fn manipulate_arithmetic() {
    let (app, _) = app(5);
    let (status, body) = call(&app, "POST", "/manipulate", Some(json!({"theta": [0.2, 0.2, 0.2, 0.2, 0.2], "topic": 0, "delta": 0.15}))).await;
    assert_eq!(status, StatusCode::OK);
    let theta: Vec<f64> = serde_json::from_value(as_json(&body)["theta"].clone()).unwrap();
    for (a, b) in theta.iter().zip([0.35, 0.1625, 0.1625, 0.1625, 0.1625]) {
        assert!((a - b).abs() < 1e-12);
    }
    let (status, body) = call(&app, "POST", "/manipulate", Some(json!({"theta": [0.9, 0.9], "topic": 0, "delta": 0.1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(as_json(&body)["error"]["kind"], "simplex_violation");
    let (status, _) = call(&app, "POST", "/manipulate", Some(json!({"theta": [0.5, 0.5], "topic": 7, "delta": 0.1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn generate_validates_requests() {
    let (app, _) = app(5);
    let bad = [
        json!({"theta": [0.5, 0.5], "count": 2}),
        json!({"count": 0}),
        json!({"count": 65}),
        json!({"count": "three"}),
    ];
    for body in bad {
        let (status, _) = call(&app, "POST", "/generate", Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }
    let req = Request::builder()
        .method("POST")
        .uri("/generate")
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(app.clone().oneshot(req).await.unwrap().status(), StatusCode::BAD_REQUEST);
    let (status, body) = call(&app, "POST", "/generate", Some(json!({"count": 1, "checkpoint_id": "other"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(as_json(&body)["error"]["kind"], "checkpoint_mismatch");
}

#[tokio::test]
async fn generate_is_replayable_and_matches_local_composition() {
    let (app, _) = app(3);
    let theta = manipulate_topic(&[0.5, 0.3, 0.2], 1, 0.15).unwrap();
    let (_, served) = call(&app, "POST", "/manipulate", Some(json!({"theta": [0.5, 0.3, 0.2], "topic": 1, "delta": 0.15}))).await;
    let served_theta = as_json(&served)["theta"].clone();
    assert_eq!(serde_json::from_value::<Vec<f64>>(served_theta.clone()).unwrap(), theta);

    let req = json!({"theta": served_theta, "count": 4, "seed": 17, "include_trace": true});
    let (status, first) = call(&app, "POST", "/generate", Some(req.clone())).await;
    assert_eq!(status, StatusCode::OK);
    let (_, second) = call(&app, "POST", "/generate", Some(req)).await;
    assert_eq!(first, second);

    let ckpt = common::tiny_checkpoint(3);
    let local = Generator::new(&ckpt.model, ckpt.config.threshold)
        .generate(Some(&theta), None, 4, &mut ChaCha8Rng::seed_from_u64(17))
        .unwrap();
    let body = as_json(&first);
    let graphs = body["graphs"].as_array().unwrap();
    assert_eq!(graphs.len(), 4);
    for (served, (g, trace)) in graphs.iter().zip(&local) {
        assert_eq!(served["graph"], serde_json::to_value(g).unwrap());
        assert_eq!(served["trace"], serde_json::to_value(trace).unwrap());
        assert!(served["profile"]["density"].is_number());
    }
}

#[tokio::test]
async fn generate_without_trace_omits_it() {
    let (app, _) = app(2);
    let (_, body) = call(&app, "POST", "/generate", Some(json!({"theta": [1.0, 0.0], "count": 2}))).await;
    let body = as_json(&body);
    assert!(body["graphs"][0].get("trace").is_none());
    assert!(body["seed"].is_u64());
}

#[tokio::test]
async fn sweep_returns_report() {
    let (app, _) = app(2);
    let (status, body) = call(
        &app,
        "POST",
        "/sweep",
        Some(json!({"topic": 0, "deltas": [-0.15, 0.0, 0.15], "per_setting": 4, "seed": 1})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let report = as_json(&body);
    assert_eq!(report["settings"].as_array().unwrap().len(), 3);
    assert_eq!(report["settings"][0]["graphs"], 4);
    assert_eq!(report["columns"][1], "density");
    let (status, _) = call(&app, "POST", "/sweep", Some(json!({"topic": 0, "per_setting": 301}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call(&app, "POST", "/sweep", Some(json!({"topic": 9}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn sweep_streams_progress_events() {
    let (app, _) = app(2);
    let req = Request::builder()
        .method("POST")
        .uri("/sweep")
        .header(header::ACCEPT, "text/event-stream")
        .body(Body::from(json!({"topic": 1, "deltas": [0.0, 0.3], "per_setting": 3}).to_string()))
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/event-stream"));
    let text = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    assert_eq!(text.matches("event: progress").count(), 2);
    let report_line = text
        .lines()
        .skip_while(|l| *l != "event: report")
        .nth(1)
        .expect("report event");
    let report: Value = serde_json::from_str(report_line.trim_start_matches("data: ")).unwrap();
    assert_eq!(report["topic"], 1);
    assert_eq!(report["settings"].as_array().unwrap().len(), 2);
}
