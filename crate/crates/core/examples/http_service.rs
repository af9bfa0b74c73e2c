//! The HTTP routes driven in-process: ingest a batch, then ask for
//! recommendations, popular decks and a predicted rating.
//!
//! cargo run --example http_service

use std::sync::Arc;

use axum::body::Body;
use axum::http::Request;
use cfrec::service::{router, Service, ServiceConfig};
use cfrec::{GroupWeights, Pseudonymizer, RecordStore};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &axum::Router, req: Request<Body>) -> (u16, Value) {
    let res = app.clone().oneshot(req).await.expect("router is infallible");
    let status = res.status().as_u16();
    let bytes = res.into_body().collect().await.expect("body reads").to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).expect("valid request")
}

#[tokio::main]
async fn main() -> cfrec::Result<()> {
    let dir = tempfile::tempdir()?;
    let config = ServiceConfig {
        store: dir.path().join("events.jsonl"),
        cold_start_min_events: 2,
        reference_time: Some("2024-03-10T00:00:00Z".into()),
        ..ServiceConfig::default()
    };
    let service =
        Service::new(config, RecordStore::new(), Pseudonymizer::new("demo-secret")?, GroupWeights::default())?;
    let app = router(Arc::new(service));

    let mut batch = Vec::new();
    for (user, decks) in [("ann", ["a", "b", "c"]), ("ben", ["a", "b", "d"]), ("cat", ["c", "d", "e"])] {
        for (i, deck) in decks.iter().enumerate() {
            batch.push(json!({"user_id": user, "deck_id": deck, "kind": "visit", "timestamp": format!("2024-03-0{}T10:00:00Z", i + 1)}));
        }
        batch.push(json!({"user_id": user, "deck_id": decks[0], "kind": "rating", "value": 4, "timestamp": "2024-03-05T10:00:00Z"}));
    }
    let post = Request::post("/v1/events")
        .header("content-type", "application/json")
        .body(Body::from(Value::Array(batch).to_string()))
        .expect("valid request");
    println!("POST /v1/events -> {:?}", call(&app, post).await);

    for uri in [
        "/v1/health",
        "/v1/users/ann/recommendations?n=3",
        "/v1/users/nobody/recommendations",
        "/v1/decks/popular?window=week",
        "/v1/users/cat/predicted-rating/a",
        "/v1/users/ann/recommendations?alpha=2",
    ] {
        let (status, body) = call(&app, get(uri)).await;
        println!("GET {uri} -> {status} {body}");
    }
    Ok(())
}
