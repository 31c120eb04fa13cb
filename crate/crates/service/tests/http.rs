mod common;

use std::sync::Arc;

use axum::http::{Method, StatusCode};
use btsred::Mode;
use btsred_service::{router, Store};
use common::{call, config, outcomes_for};
use serde_json::{json, Value};

fn app() -> axum::Router {
    router(Arc::new(Store::in_memory()))
}

async fn create(app: &axum::Router, mode: Mode) -> String {
    let (status, body) = call(
        app,
        Method::POST,
        "/sessions",
        Some(serde_json::to_value(config(mode)).unwrap()),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn create_returns_distinct_ids_and_fresh_summary() {
    let app = app();
    let a = create(&app, Mode::Unknown).await;
    let b = create(&app, Mode::Unknown).await;
    assert_ne!(a, b);
    let (status, summary) = call(&app, Method::GET, &format!("/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["iteration"], 0);
    assert_eq!(summary["incumbents"], json!([]));
    assert_eq!(summary["history"], json!([]));
    assert_eq!(summary["ledger"]["next_effective_budget"], 12);
}

#[tokio::test]
async fn invalid_config_names_the_field() {
    let app = app();
    let mut cfg = serde_json::to_value(config(Mode::MeanVar)).unwrap();
    cfg["omega"] = json!(1.2);
    let (status, body) = call(&app, Method::POST, "/sessions", Some(cfg)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "validation_error");
    assert!(
        body["field_paths"].as_array().unwrap().contains(&json!("omega")),
        "{body}"
    );

    let mut cfg = serde_json::to_value(config(Mode::Unknown)).unwrap();
    cfg["budget"] = json!("lots");
    let (status, body) = call(&app, Method::POST, "/sessions", Some(cfg)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field_paths"], json!(["budget"]));

    let mut cfg = serde_json::to_value(config(Mode::Unknown)).unwrap();
    cfg["surprise"] = json!(1);
    let (status, _) = call(&app, Method::POST, "/sessions", Some(cfg)).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn suggest_observe_cycle() {
    let app = app();
    let id = create(&app, Mode::Unknown).await;
    let (status, proposal) = call(&app, Method::POST, &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(status, StatusCode::OK);
    let slots = proposal["slots"].as_array().unwrap();
    assert_eq!(slots.len(), 6);
    assert!(slots.iter().all(|s| s["n"] == 2));
    let x = slots[0]["x"].as_array().unwrap();
    assert!((10.0..=30.0).contains(&x[0].as_f64().unwrap()));

    let (status, body) = call(&app, Method::POST, &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["code"], "conflict");

    let mut short = outcomes_for(&proposal, 1);
    short[2].pop();
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/observe"),
        Some(json!({ "outcomes": short })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field_paths"], json!(["outcomes[2]"]));

    let request = json!({ "outcomes": outcomes_for(&proposal, 1), "idempotency_key": "batch-1" });
    let (status, body) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/observe"),
        Some(request.clone()),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["applied"], true);
    let summary = &body["session"];
    assert_eq!(summary["iteration"], 1);
    assert_eq!(summary["history"].as_array().unwrap().len(), 6);
    let rules: Vec<&str> = summary["incumbents"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["rule"].as_str().unwrap())
        .collect();
    assert!(rules.contains(&"empirical_mean"));

    let (status, again) = call(&app, Method::POST, &format!("/sessions/{id}/observe"), Some(request)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(again["applied"], false);
    assert_eq!(again["session"]["iteration"], 1);
    assert_eq!(again["session"]["audit"].as_array().unwrap().len(), 2);

    let (status, _) = call(
        &app,
        Method::POST,
        &format!("/sessions/{id}/observe"),
        Some(json!({ "outcomes": [[1.0]] })),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn grid_export_matches_resolution() {
    let app = app();
    let id = create(&app, Mode::Unknown).await;
    let (status, grid) = call(&app, Method::GET, &format!("/sessions/{id}/grid?resolution=5"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(grid["resolution"], 5);
    assert_eq!(grid["axes"][0].as_array().unwrap().len(), 5);
    assert_eq!(grid["axes"][0][4], 30.0);
    for key in [
        "objective_mean",
        "objective_variance",
        "noise_variance",
        "noise_uncertainty",
    ] {
        assert_eq!(grid[key].as_array().unwrap().len(), 25, "{key}");
    }
    let (status, body) = call(&app, Method::GET, &format!("/sessions/{id}/grid?resolution=1"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field_paths"], json!(["resolution"]));
    let (status, summary) = call(&app, Method::GET, &format!("/sessions/{id}?resolution=3"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["grid"]["objective_mean"].as_array().unwrap().len(), 9);
}

#[tokio::test]
async fn weight_updates() {
    let app = app();
    let id = create(&app, Mode::MeanVar).await;
    let uri = format!("/sessions/{id}/weight");
    let (status, body) = call(&app, Method::PATCH, &uri, Some(json!({ "omega": -0.1 }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["field_paths"], json!(["omega"]));
    let (status, body) = call(&app, Method::PATCH, &uri, Some(json!({ "omega": 0.5 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({ "acknowledged": true, "omega": 0.5 }));
    let (_, summary) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(summary["omega"], 0.5);

    call(&app, Method::POST, &format!("/sessions/{id}/suggest"), None).await;
    let (status, _) = call(&app, Method::PATCH, &uri, Some(json!({ "omega": 0.9 }))).await;
    assert_eq!(status, StatusCode::CONFLICT);

    let known = {
        let mut c = config(Mode::Known);
        c.n_min = 1;
        c.known_noise = Some(btsred::config::KnownNoise::Constant { variance: 0.05 });
        c
    };
    let (_, created) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(serde_json::to_value(known).unwrap()),
    )
    .await;
    let known_id = created["id"].as_str().unwrap();
    let (status, body) = call(
        &app,
        Method::PATCH,
        &format!("/sessions/{known_id}/weight"),
        Some(json!({ "omega": 0.5 })),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["code"], "unsupported");
}

#[tokio::test]
async fn unknown_ids_and_routes() {
    let app = app();
    let (status, body) = call(&app, Method::GET, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["code"], "not_found");
    let (status, _) = call(&app, Method::POST, "/sessions/nope/suggest", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::GET, "/elsewhere", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn finished_session_rejects_suggest() {
    let app = app();
    let mut cfg = config(Mode::Unknown);
    cfg.horizon = 2;
    let (_, created) = call(
        &app,
        Method::POST,
        "/sessions",
        Some(serde_json::to_value(cfg).unwrap()),
    )
    .await;
    let id = created["id"].as_str().unwrap().to_string();
    for t in 0..2 {
        let (_, proposal) = call(&app, Method::POST, &format!("/sessions/{id}/suggest"), None).await;
        let (status, _) = call(
            &app,
            Method::POST,
            &format!("/sessions/{id}/observe"),
            Some(json!({ "outcomes": outcomes_for(&proposal, t) })),
        )
        .await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, summary) = call(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["finished"], true);
    let (status, _) = call(&app, Method::POST, &format!("/sessions/{id}/suggest"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
}

#[tokio::test]
async fn concurrent_sessions_are_independent() {
    let app = app();
    let ids: Vec<String> = futures_ids(&app, 4).await;
    let handles: Vec<_> = ids
        .iter()
        .map(|id| {
            let app = app.clone();
            let id = id.clone();
            tokio::spawn(async move { call(&app, Method::POST, &format!("/sessions/{id}/suggest"), None).await })
        })
        .collect();
    let mut proposals: Vec<Value> = Vec::new();
    for h in handles {
        let (status, p) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        proposals.push(p);
    }
    // same config and seed: identical first proposals
    assert!(proposals.windows(2).all(|w| w[0] == w[1]));
}

async fn futures_ids(app: &axum::Router, n: usize) -> Vec<String> {
    let mut ids = Vec::new();
    for _ in 0..n {
        ids.push(create(app, Mode::Unknown).await);
    }
    ids
}
