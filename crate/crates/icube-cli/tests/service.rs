use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use icube_cli::service::{router, AppState, ServiceConfig};
use icube_core::data::{generate_paired, generate_unpaired};
use icube_core::procedures::{run_crossfit, Method as Proc, ProcedureSpec};
use icube_core::{Dataset, EffectModel, MaskingMode};
use serde_json::{json, Value};
use std::sync::Arc;
use std::time::Duration;
use tower::ServiceExt;

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or_else(Body::empty, |b| Body::from(b.to_string()))).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() })
}

fn csv(ds: &Dataset) -> String {
    let mut buf = Vec::new();
    ds.write_csv(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn app(max_sessions: usize) -> Router {
    router(AppState::new(ServiceConfig { max_sessions, idle_timeout: Duration::from_secs(3600) }))
}

/// Keys that must never appear on a candidate in the given mode.
fn assert_no_masked_keys(view: &Value) {
    let may = view["mode"].as_str().unwrap().contains("may");
    for u in view["units"].as_array().unwrap() {
        if u["role"] == "candidate" {
            let obj = u.as_object().unwrap();
            assert!(!obj.contains_key("a") && !obj.contains_key("delta_hat"), "{u}");
            if may {
                assert!(!obj.contains_key("y") && !obj.contains_key("residual"), "{u}");
            }
            assert!(obj.values().all(|v| !v.is_null()), "{u}");
        }
    }
}

#[tokio::test]
async fn http_session_matches_library_run() {
    let (ds, _) = generate_unpaired(200, EffectModel::BiasSparse { scale: 2.0 }, 8).unwrap();
    let ds = Arc::new(ds);
    let seed = 99u64;
    let spec = ProcedureSpec::new(Proc::CrossfitI3, 0.2, seed);
    let halves = run_crossfit(&ds, MaskingMode::Crossfit, 0.2, &spec.strategy, spec.split_seed, &spec.outcome_model).unwrap();
    let app = app(4);
    for (h, half) in halves.iter().enumerate() {
        let (status, desc) = call(
            &app,
            Method::POST,
            "/sessions",
            Some(json!({ "data": csv(&ds), "mode": "crossfit", "alpha": 0.1, "half": h, "seed": seed })),
        )
        .await;
        assert_eq!(status, StatusCode::CREATED, "{desc}");
        assert_eq!(desc["seed"], seed);
        assert_eq!(serde_json::from_value::<Vec<usize>>(desc["units"].clone()).unwrap(), half.units);
        let id = desc["session_id"].as_str().unwrap().to_string();
        let mut trajectory = vec![];
        for (k, &u) in half.exclusions.iter().enumerate() {
            let (status, view) = call(&app, Method::GET, &format!("/sessions/{id}/view"), None).await;
            assert_eq!(status, StatusCode::OK);
            assert_no_masked_keys(&view);
            trajectory.push(view["fdr_hat"].as_f64().unwrap());
            if k == 0 {
                let (status, early) = call(&app, Method::GET, &format!("/sessions/{id}/result"), None).await;
                assert_eq!(status, StatusCode::CONFLICT, "{early}");
            }
            let (status, receipt) = call(&app, Method::POST, &format!("/sessions/{id}/exclude"), Some(json!({ "unit_id": u }))).await;
            assert_eq!(status, StatusCode::OK, "{receipt}");
            assert_eq!(receipt["t"], k + 1);
        }
        let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}/view"), None).await;
        trajectory.push(view["fdr_hat"].as_f64().unwrap());
        assert_eq!(view["stopped"], true);
        assert_eq!(trajectory, half.trajectory);
        let (status, result) = call(&app, Method::GET, &format!("/sessions/{id}/result"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(serde_json::from_value::<Vec<usize>>(result["rejected"].clone()).unwrap(), half.rejected);
        assert_eq!(serde_json::from_value::<Vec<f64>>(result["fdr_hat_trajectory"].clone()).unwrap(), half.trajectory);
        let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/exclude"), Some(json!({ "unit_id": half.units[0] }))).await;
        assert!(status == StatusCode::CONFLICT || status == StatusCode::UNPROCESSABLE_ENTITY);
    }
}

#[tokio::test]
async fn suggestion_ranks_candidates_and_drives_a_run() {
    let (ds, _) = generate_unpaired(120, EffectModel::BiasSparse { scale: 3.0 }, 2).unwrap();
    let app = app(4);
    let (_, desc) = call(&app, Method::POST, "/sessions", Some(json!({ "data": csv(&ds), "mode": "crossfit", "alpha": 0.2, "seed": 5 }))).await;
    let id = desc["session_id"].as_str().unwrap().to_string();
    assert_eq!(desc["n"], 120);
    loop {
        let (status, s) = call(&app, Method::POST, &format!("/sessions/{id}/suggest"), Some(json!({ "strategy": "min_abs" }))).await;
        if status == StatusCode::CONFLICT {
            break;
        }
        assert_eq!(status, StatusCode::OK, "{s}");
        let ranking = s["ranking"].as_array().unwrap();
        let scores: Vec<f64> = ranking.iter().map(|r| r["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] <= w[1]));
        let next = ranking[0]["unit_id"].as_u64().unwrap();
        let (status, r) = call(&app, Method::POST, &format!("/sessions/{id}/exclude"), Some(json!({ "unit_id": next }))).await;
        assert_eq!(status, StatusCode::OK, "{r}");
    }
    let (status, desc) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(desc["status"], "stopped");
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/result"), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn error_statuses() {
    let (ds, _) = generate_unpaired(60, EffectModel::BiasSparse { scale: 0.0 }, 4).unwrap();
    let app = app(1);
    let (status, _) = call(&app, Method::GET, "/sessions/nope/view", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(json!({ "data": "id,y,a\n0,1,7\n", "mode": "crossfit", "alpha": 0.2 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(json!({ "data": csv(&ds), "mode": "may", "alpha": 0.2 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, desc) = call(&app, Method::POST, "/sessions", Some(json!({ "data": csv(&ds), "mode": "crossfit", "alpha": 0.2 }))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert!(desc["seed"].is_u64());
    let id = desc["session_id"].as_str().unwrap().to_string();
    let (status, _) = call(&app, Method::POST, "/sessions", Some(json!({ "data": csv(&ds), "mode": "crossfit", "alpha": 0.2 }))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    if desc["status"] == "active" {
        let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/exclude"), Some(json!({ "unit_id": 3 }))).await;
        assert_eq!(status, StatusCode::OK);
        let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/exclude"), Some(json!({ "unit_id": 3 }))).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
        let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/exclude"), Some(json!({ "unit_id": 6000 }))).await;
        assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    }
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/suggest"), Some(json!({ "strategy": "imputed_min_prob" }))).await;
    assert!(status == StatusCode::UNPROCESSABLE_ENTITY || status == StatusCode::CONFLICT);
    let (status, _) = call(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/view"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn may_and_paired_views_hide_masked_fields() {
    let (ds, _) = generate_unpaired(80, EffectModel::BiasSparse { scale: 2.0 }, 1).unwrap();
    let (pairs, _) = generate_paired(40, EffectModel::BiasSparse { scale: 2.0 }, 0.0, 1).unwrap();
    let app = app(4);
    for (data, mode) in [(csv(&ds), "may"), (csv(&pairs), "paired_crossfit"), (csv(&pairs), "paired_may")] {
        let (status, desc) = call(&app, Method::POST, "/sessions", Some(json!({ "data": data, "mode": mode, "alpha": 0.1, "half": 0, "seed": 3 }))).await;
        assert_eq!(status, StatusCode::CREATED, "{mode}: {desc}");
        let id = desc["session_id"].as_str().unwrap();
        let (_, view) = call(&app, Method::GET, &format!("/sessions/{id}/view"), None).await;
        assert_no_masked_keys(&view);
        let complement = view["units"].as_array().unwrap().iter().find(|u| u["role"] == "complement").unwrap();
        assert!(complement.get("a").is_some());
    }
}

#[tokio::test]
async fn idle_sessions_are_evicted() {
    let (ds, _) = generate_unpaired(40, EffectModel::BiasSparse { scale: 1.0 }, 1).unwrap();
    let app = router(AppState::new(ServiceConfig { max_sessions: 4, idle_timeout: Duration::from_millis(50) }));
    let (_, desc) = call(&app, Method::POST, "/sessions", Some(json!({ "data": csv(&ds), "mode": "crossfit", "alpha": 0.2 }))).await;
    let id = desc["session_id"].as_str().unwrap().to_string();
    tokio::time::sleep(Duration::from_millis(120)).await;
    let (status, _) = call(&app, Method::GET, &format!("/sessions/{id}/view"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
