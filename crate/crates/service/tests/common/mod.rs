#![allow(dead_code)]

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use btsred::{DomainSpec, ExperimentConfig, Mode};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub fn config(mode: Mode) -> ExperimentConfig {
    let domain = DomainSpec::Grid {
        lower: vec![10.0, 0.0],
        upper: vec![30.0, 2.0],
        points_per_dim: vec![9, 7],
    };
    let mut c = ExperimentConfig::new(mode, domain, 12, 6, 17);
    c.num_features = 64;
    c.refit_every = 2;
    if mode == Mode::MeanVar {
        c.omega = 0.6;
    }
    c
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let res = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, value)
}

/// Deterministic replicate values for a proposal: a smooth response plus
/// a hash-based wobble per replicate.
pub fn outcomes_for(proposal: &Value, salt: u64) -> Vec<Vec<f64>> {
    proposal["slots"]
        .as_array()
        .unwrap()
        .iter()
        .enumerate()
        .map(|(b, slot)| {
            let x: Vec<f64> = slot["x"]
                .as_array()
                .unwrap()
                .iter()
                .map(|v| v.as_f64().unwrap())
                .collect();
            let n = slot["n"].as_u64().unwrap();
            let base = -((x[0] - 22.0) / 10.0).powi(2) - (x[1] - 1.3).powi(2);
            (0..n)
                .map(|k| {
                    let h = (salt * 1_000_003 + b as u64 * 7919 + k * 104_729) % 1000;
                    base + 0.05 * (h as f64 / 1000.0 - 0.5)
                })
                .collect()
        })
        .collect()
}
