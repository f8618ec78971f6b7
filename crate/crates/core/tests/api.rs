use std::process::Command;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use robust_lanchester::commands::RunResult;
use robust_lanchester::config::ScenarioConfig;
use robust_lanchester::service::{router, ServiceState};

fn state() -> ServiceState {
    ServiceState {
        defaults: ScenarioConfig::default(),
        budget_ms: None,
        static_dir: None,
    }
}

async fn call(method: &str, uri: &str, body: Value) -> (StatusCode, Vec<u8>) {
    let request = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(if body.is_null() { Body::empty() } else { Body::from(body.to_string()) })
        .unwrap();
    let response = router(state()).oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn json_of(bytes: &[u8]) -> Value {
    serde_json::from_slice(bytes).unwrap()
}

#[tokio::test]
async fn health_and_defaults() {
    let (status, body) = call("GET", "/api/health", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["status"], "ok");
    let (status, body) = call("GET", "/api/defaults", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    let defaults: ScenarioConfig = serde_json::from_slice(&body).unwrap();
    assert_eq!(defaults, ScenarioConfig::default());
    let (status, body) = call("GET", "/api/schema", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["title"], "ScenarioConfig");
    let (status, _) = call("GET", "/", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn same_body_same_bytes() {
    let body = json!({"scenario": {"seed": 5, "pi": 0.6}, "paths": 800});
    let (s1, a) = call("POST", "/api/simulate", body.clone()).await;
    let (s2, b) = call("POST", "/api/simulate", body).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b);
    let result: RunResult = serde_json::from_slice(&a).unwrap();
    assert_eq!(result.trajectory.paths, 800);
    assert_eq!(result.pi, 0.6);
}

#[tokio::test]
async fn empty_body_uses_defaults() {
    let (status, body) = call("POST", "/api/aggregate", Value::Null).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(json_of(&body)["config_hash"], ScenarioConfig::default().hash());
}

#[tokio::test]
async fn invalid_body_lists_field_errors() {
    let body = json!({"scenario": {"weights": [0.5, 0.6], "preferences": {"theta": [1, 1, 1]}}});
    let (status, bytes) = call("POST", "/api/optimize", body).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let errors = json_of(&bytes)["errors"].as_array().unwrap().clone();
    let fields: Vec<&str> = errors.iter().map(|e| e["field"].as_str().unwrap()).collect();
    assert!(fields.contains(&"weights") && fields.contains(&"preferences.theta"), "{fields:?}");
    assert!(errors.iter().any(|e| e["message"].as_str().unwrap().contains("weights must sum to 1")));

    let (status, _) = call("POST", "/api/simulate", json!({"scenario": {"nonsense": 1}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = call("POST", "/api/simulate", json!({"scenaro": {}})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn enumeration_refusal_is_422() {
    let body = json!({"scenario": {"grid": {"n_steps": 14, "dt": 0.5}, "aversion": {"mode": "radius", "value": 1.0}}});
    let (status, bytes) = call("POST", "/api/aggregate", body).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert!(!json_of(&bytes)["errors"].as_array().unwrap().is_empty());
}

#[tokio::test]
async fn sweep_returns_requested_points() {
    let (status, bytes) = call("POST", "/api/sweep", json!({"grid_points": 11})).await;
    assert_eq!(status, StatusCode::OK);
    let v = json_of(&bytes);
    assert_eq!(v["points"].as_array().unwrap().len(), 11);
    assert_eq!(v["argmax_pi"], 1.0);
}

#[tokio::test]
async fn budget_cap_applies_to_requests() {
    let mut s = state();
    s.budget_ms = Some(0);
    let request = Request::builder()
        .method("POST")
        .uri("/api/optimize")
        .body(Body::from(json!({"paths": 200}).to_string()))
        .unwrap();
    let response = router(s).oneshot(request).await.unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let result: RunResult = serde_json::from_slice(&bytes).unwrap();
    assert_eq!(result.diagnostics.status.unwrap(), robust_lanchester::optimizer::OptimizationStatus::BudgetExceeded);
}

#[tokio::test]
async fn cli_and_api_agree() {
    let dir = tempfile::tempdir().unwrap();
    let overrides = json!({"seed": 3, "paths": 1500, "preferences": {"zeta": 0.1}});
    let config_path = dir.path().join("c.json");
    std::fs::write(&config_path, overrides.to_string()).unwrap();
    let bin = env!("CARGO_BIN_EXE_robust-lanchester");
    for (cmd, uri) in [("optimize", "/api/optimize"), ("simulate", "/api/simulate")] {
        let out = Command::new(bin)
            .arg(cmd)
            .arg("--config")
            .arg(&config_path)
            .env_remove("ROBUST_LANCHESTER_BUDGET_MS")
            .output()
            .unwrap();
        assert!(out.status.success());
        let cli: RunResult = serde_json::from_slice(&out.stdout).unwrap();
        let (status, bytes) = call("POST", uri, json!({"scenario": overrides})).await;
        assert_eq!(status, StatusCode::OK);
        let api: RunResult = serde_json::from_slice(&bytes).unwrap();
        assert_eq!(cli, api, "{cmd}");
    }
}

#[tokio::test]
async fn static_bundle_served_when_configured() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>console</h1>").unwrap();
    let mut s = state();
    s.static_dir = Some(dir.path().to_path_buf());
    let response = router(s)
        .oneshot(Request::builder().uri("/index.html").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(response.status(), StatusCode::OK);
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&bytes[..], b"<h1>console</h1>");
}
