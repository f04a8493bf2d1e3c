use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use pfts_cli::http::{router, ErrorBody, PairResponse};
use pfts_core::session::{SessionReport, SessionService, SessionState, SessionStatus, SessionStore};
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app() -> Router {
    router(Arc::new(SessionService::new(SessionStore::in_memory()).unwrap()))
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn call_json<T: DeserializeOwned>(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, T) {
    let (status, bytes) = call(app, method, uri, body).await;
    let parsed = serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&bytes)));
    (status, parsed)
}

fn candidates(n: usize) -> Value {
    json!({ "candidates": (0..n).map(|i| json!({ "label": format!("option {i}") })).collect::<Vec<_>>() })
}

async fn create(app: &Router, body: Value) -> SessionState {
    let (status, s) = call_json::<SessionState>(app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::CREATED);
    s
}

#[tokio::test]
async fn full_round_trip() {
    let app = app();
    let s = create(&app, candidates(4)).await;
    assert_eq!(s.status, SessionStatus::Ready);
    assert_eq!(s.t, 0);

    let (status, ids) = call_json::<Vec<String>>(&app, Method::GET, "/sessions", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ids, vec![s.id.clone()]);

    let (status, p) = call_json::<PairResponse>(&app, Method::GET, &format!("/sessions/{}/pair", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(p.round, 1);
    assert_eq!(p.first_label, format!("option {}", p.first));
    let (_, again) = call_json::<PairResponse>(&app, Method::GET, &format!("/sessions/{}/pair", s.id), None).await;
    assert_eq!(p, again);

    let (_, got) = call_json::<SessionState>(&app, Method::GET, &format!("/sessions/{}", s.id), None).await;
    assert_eq!(got.status, SessionStatus::AwaitingFeedback);

    let (status, after) = call_json::<SessionState>(
        &app,
        Method::POST,
        &format!("/sessions/{}/feedback", s.id),
        Some(json!({ "winner": p.first, "token": p.token })),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(after.t, 1);
    assert_eq!(after.history.len(), 1);

    let (status, r) = call_json::<SessionReport>(&app, Method::GET, &format!("/sessions/{}/report", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(r.t, 1);
    assert_eq!(r.candidates.len(), 4);
    assert_eq!(r.ranking.len(), 4);

    let (status, closed) = call_json::<SessionState>(&app, Method::DELETE, &format!("/sessions/{}", s.id), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(closed.status, SessionStatus::Closed);
    let (status, e) = call_json::<ErrorBody>(&app, Method::GET, &format!("/sessions/{}/pair", s.id), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e.code, "conflict");
}

#[tokio::test]
async fn errors_are_json() {
    let app = app();
    let (status, e) = call_json::<ErrorBody>(&app, Method::POST, "/sessions", Some(candidates(1))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(e.code, "bad_request");

    let (status, e) = call_json::<ErrorBody>(&app, Method::POST, "/sessions", Some(json!({ "nope": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(e.code, "bad_request");

    let (status, e) = call_json::<ErrorBody>(&app, Method::GET, "/sessions/missing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(e.code, "not_found");

    let (status, e) = call_json::<ErrorBody>(&app, Method::GET, "/elsewhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(e.code, "not_found");

    let s = create(&app, candidates(3)).await;
    let uri = format!("/sessions/{}/feedback", s.id);
    let (status, e) = call_json::<ErrorBody>(&app, Method::POST, &uri, Some(json!({ "winner": 0 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(e.code, "conflict");

    let (_, p) = call_json::<PairResponse>(&app, Method::GET, &format!("/sessions/{}/pair", s.id), None).await;
    let (status, e) = call_json::<ErrorBody>(&app, Method::POST, &uri, Some(json!({ "winner": 99 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(e.message.contains("99"));
    let (status, _) = call_json::<ErrorBody>(&app, Method::POST, &uri, Some(json!({ "winner": p.first, "token": "x" }))).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn ragged_features_rejected() {
    let app = app();
    let body = json!({ "candidates": [
        { "label": "a", "features": [0.0] },
        { "label": "b", "features": [1.0, 2.0] },
    ]});
    let (status, e) = call_json::<ErrorBody>(&app, Method::POST, "/sessions", Some(body)).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(e.code, "bad_request");
}

#[tokio::test]
async fn config_is_applied() {
    let app = app();
    let mut body = candidates(3);
    body["config"] = json!({ "seed": 42, "lambda": 0.1, "schedule": { "kind": "constant", "value": 0.0 } });
    let s = create(&app, body).await;
    assert_eq!(s.config.seed, 42);
    assert_eq!(s.config.lambda, 0.1);
    // a zero-scale draw is the prior mean, so both picks are candidate 0
    let (_, p) = call_json::<PairResponse>(&app, Method::GET, &format!("/sessions/{}/pair", s.id), None).await;
    assert_eq!((p.first, p.second, p.v_t), (0, 0, 0.0));
}

#[tokio::test]
async fn cors_headers_and_preflight() {
    let app = app();
    let req = Request::builder().method(Method::OPTIONS).uri("/sessions").body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::NO_CONTENT);
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
    let req = Request::builder().uri("/sessions").body(Body::empty()).unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert_eq!(resp.headers()["access-control-allow-origin"], "*");
}

#[tokio::test]
async fn state_survives_router_restart() {
    let dir = tempfile::tempdir().unwrap();
    let open = || router(Arc::new(SessionService::new(SessionStore::open(dir.path()).unwrap()).unwrap()));
    let app = open();
    let s = create(&app, candidates(3)).await;
    let (_, p) = call_json::<PairResponse>(&app, Method::GET, &format!("/sessions/{}/pair", s.id), None).await;
    let body = json!({ "winner": p.second, "token": p.token });
    call(&app, Method::POST, &format!("/sessions/{}/feedback", s.id), Some(body.clone())).await;
    drop(app);

    let app = open();
    let (status, again) = call_json::<SessionState>(&app, Method::POST, &format!("/sessions/{}/feedback", s.id), Some(body)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again.t, 1);
}

#[tokio::test]
async fn scripted_judge_finds_the_best_item() {
    // hidden utility over 5 labeled items; the judge answers deterministically
    let utility = [0.1, 0.9, 0.3, 0.5, 0.2];
    let app = app();
    let mut body = json!({ "candidates": (0..5).map(|i| json!({ "label": format!("item {i}"), "features": [i as f64 / 4.0] })).collect::<Vec<_>>() });
    body["config"] = json!({ "seed": 3 });
    let s = create(&app, body).await;
    for _ in 0..30 {
        let (_, p) = call_json::<PairResponse>(&app, Method::GET, &format!("/sessions/{}/pair", s.id), None).await;
        let winner = if utility[p.first] >= utility[p.second] { p.first } else { p.second };
        let (status, _) = call(&app, Method::POST, &format!("/sessions/{}/feedback", s.id), Some(json!({ "winner": winner }))).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (_, r) = call_json::<SessionReport>(&app, Method::GET, &format!("/sessions/{}/report", s.id), None).await;
    assert_eq!(r.t, 30);
    assert_eq!(r.best, 1);
    assert_eq!(r.best_label, "item 1");
}
