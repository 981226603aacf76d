//! HTTP API behaviour against small models trained on the demo corpus.

use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use seedline_core::corpus::{demo_records, Corpus, CorpusOptions};
use seedline_core::lstm_vae::{train, TrainConfig, VaeConfig};
use seedline_core::{train_lm, LmConfig};
use seedline_service::http::router;
use seedline_service::{CurationSession, Models, PoolService, SessionStore};

fn models() -> Arc<Models> {
    static MODELS: OnceLock<Arc<Models>> = OnceLock::new();
    MODELS
        .get_or_init(|| {
            let (corpus, vocab) = Corpus::build(&demo_records(), &CorpusOptions::default());
            let cfg = TrainConfig {
                epochs: 8,
                ..TrainConfig::default()
            };
            let vae_cfg = VaeConfig {
                d_embed: 16,
                d_hidden: 32,
                d_z: 8,
                ..VaeConfig::default()
            };
            let (vae, _) = train(&corpus, &vocab, vae_cfg, &cfg, |_| {}).unwrap();
            let lm_cfg = LmConfig {
                d_embed: 16,
                d_hidden: 32,
                ..LmConfig::default()
            };
            let (lm, _) = train_lm(&corpus, &vocab, lm_cfg, &cfg, |_| {}).unwrap();
            Arc::new(Models::new(vae, lm, &corpus, "vae.ckpt".into(), "lm.ckpt".into()).unwrap())
        })
        .clone()
}

fn service(dir: &std::path::Path) -> Arc<PoolService> {
    Arc::new(PoolService::with_models(models(), SessionStore::open(dir).unwrap(), 200, 0))
}

async fn call(svc: &Arc<PoolService>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = router(svc.clone()).oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

async fn call_json(svc: &Arc<PoolService>, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(svc, method, uri, body).await;
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn new_session(svc: &Arc<PoolService>) -> String {
    let (status, v) = call_json(svc, "POST", "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["id"].as_str().unwrap().to_string()
}

async fn pool_ids(svc: &Arc<PoolService>, id: &str, n: usize, seed: u64) -> Vec<u64> {
    let (status, v) = call_json(svc, "POST", &format!("/sessions/{id}/pool"), Some(json!({"n": n, "seed": seed}))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    v["lines"].as_array().unwrap().iter().map(|l| l["id"].as_u64().unwrap()).collect()
}

fn texts(v: &Value) -> Vec<String> {
    v["pool"].as_array().unwrap().iter().map(|l| l["text"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn sessions_get_distinct_ids() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let a = new_session(&svc).await;
    let b = new_session(&svc).await;
    assert_ne!(a, b);
    // an empty body with a JSON content type is accepted too
    let req = Request::builder()
        .method("POST")
        .uri("/sessions")
        .header("content-type", "application/json")
        .body(Body::empty())
        .unwrap();
    assert_eq!(router(svc.clone()).oneshot(req).await.unwrap().status(), StatusCode::CREATED);
    let (status, v) = call_json(&svc, "POST", "/sessions", Some(json!({"band": {"mode": "sideways"}}))).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::BAD_REQUEST, Some("bad_params")));
    let (status, v) = call_json(&svc, "GET", &format!("/sessions/{a}"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["pool"], json!([]));
}

#[tokio::test]
async fn same_seed_gives_same_pool() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let mut pools = Vec::new();
    for _ in 0..2 {
        let id = new_session(&svc).await;
        pool_ids(&svc, &id, 40, 11).await;
        let (_, v) = call_json(&svc, "GET", &format!("/sessions/{id}"), None).await;
        pools.push(texts(&v));
    }
    assert_eq!(pools[0], pools[1]);
    assert!(!pools[0].is_empty() && pools[0].len() <= 40);
}

#[tokio::test]
async fn pool_lines_are_scored_and_unique() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let id = new_session(&svc).await;
    let (_, first) = call_json(&svc, "POST", &format!("/sessions/{id}/pool"), Some(json!({"n": 60, "seed": 1}))).await;
    let (_, second) = call_json(&svc, "POST", &format!("/sessions/{id}/pool"), Some(json!({"n": 60, "seed": 2}))).await;
    let (_, v) = call_json(&svc, "GET", &format!("/sessions/{id}"), None).await;
    let all = texts(&v);
    let unique: std::collections::HashSet<_> = all.iter().collect();
    assert_eq!(unique.len(), all.len());
    assert_eq!(second["pool_size"].as_u64().unwrap() as usize, all.len());
    for line in v["pool"].as_array().unwrap() {
        let score = &line["score"];
        let novelty = score["novelty"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&novelty));
        assert!(score["surprisal"].as_f64().unwrap() > 0.0);
    }
    let ids: Vec<u64> = v["pool"].as_array().unwrap().iter().map(|l| l["id"].as_u64().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[0] < w[1]));
    assert!(first["report"]["quantiles"]["q50"].is_number());
}

#[tokio::test]
async fn empty_band_result_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (status, v) = call_json(
        &svc,
        "POST",
        "/sessions",
        Some(json!({"band": {"mode": "absolute", "low": 100.0, "high": 101.0}})),
    )
    .await;
    assert_eq!(status, StatusCode::CREATED);
    let id = v["id"].as_str().unwrap();
    let (status, v) = call_json(
        &svc,
        "POST",
        &format!("/sessions/{id}/pool"),
        Some(json!({"n": 20, "seed": 3, "apply_band": true})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["lines"], json!([]));
    assert_eq!(v["report"]["in_band"], 0);
    assert!(v["report"]["below"].as_u64().unwrap() > 0);
}

#[tokio::test]
async fn error_statuses_and_bodies() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (status, v) = call_json(&svc, "GET", "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(v["error"], "session_not_found");
    assert!(v["detail"].is_string());

    let id = new_session(&svc).await;
    let base = format!("/sessions/{id}");
    for body in [json!({"n": 0}), json!({"n": 10001}), json!({"n": 5, "temperature": 0.0})] {
        let (status, v) = call_json(&svc, "POST", &format!("{base}/pool"), Some(body)).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert_eq!(v["error"], "bad_params");
    }
    let (status, v) = call_json(&svc, "POST", &format!("{base}/pool"), Some(json!({"seed": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");

    let ids = pool_ids(&svc, &id, 10, 4).await;
    let (status, v) = call_json(&svc, "POST", &format!("{base}/pin"), Some(json!({"line_id": 999}))).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::NOT_FOUND, Some("unknown_line")));
    let (status, v) = call_json(&svc, "PUT", &format!("{base}/arrangement"), Some(json!({"line_ids": [ids[0]]}))).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("not_pinned")));
    call_json(&svc, "POST", &format!("{base}/pin"), Some(json!({"line_id": ids[0]}))).await;
    let (status, v) =
        call_json(&svc, "PUT", &format!("{base}/arrangement"), Some(json!({"line_ids": [ids[0], ids[0]]}))).await;
    assert_eq!((status, v["error"].as_str()), (StatusCode::CONFLICT, Some("duplicate_id")));
    let (status, _) = call_json(&svc, "GET", &format!("{base}/export?format=pdf"), None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    // failed operations leave the session as it was
    let (_, v) = call_json(&svc, "GET", &base, None).await;
    assert_eq!(v["arrangement"], json!([]));
    assert_eq!(v["pinned"], json!([ids[0]]));
}

#[tokio::test]
async fn pin_unpin_and_arrange() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let id = new_session(&svc).await;
    let base = format!("/sessions/{id}");
    let ids = pool_ids(&svc, &id, 20, 5).await;
    let (_, before) = call_json(&svc, "GET", &base, None).await;
    for &l in &ids[..3] {
        call_json(&svc, "POST", &format!("{base}/pin"), Some(json!({"line_id": l}))).await;
    }
    let order = json!([ids[2], ids[0], ids[1]]);
    let (status, v) = call_json(&svc, "PUT", &format!("{base}/arrangement"), Some(json!({"line_ids": order}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["arrangement"], order);
    let (_, v) = call_json(&svc, "POST", &format!("{base}/unpin"), Some(json!({"line_id": ids[0]}))).await;
    assert_eq!(v["arrangement"], json!([ids[2], ids[1]]));
    for &l in &[ids[1], ids[2]] {
        call_json(&svc, "POST", &format!("{base}/unpin"), Some(json!({"line_id": l}))).await;
    }
    let (_, after) = call_json(&svc, "GET", &base, None).await;
    assert_eq!(after["pinned"], before["pinned"]);
    assert_eq!(after["arrangement"], before["arrangement"]);
    assert_eq!(after["pool"], before["pool"]);
}

#[tokio::test]
async fn variations_record_their_parents() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let id = new_session(&svc).await;
    let base = format!("/sessions/{id}");
    let ids = pool_ids(&svc, &id, 20, 6).await;
    let (status, v) = call_json(
        &svc,
        "POST",
        &format!("{base}/vary"),
        Some(json!({"line_id": ids[0], "mode": "neighborhood", "radius": 0.1, "n": 8})),
    )
    .await;
    assert_eq!(status, StatusCode::OK, "{v}");
    let lines = v["lines"].as_array().unwrap();
    assert_eq!(lines.len(), 8);
    for l in lines {
        assert_eq!(l["provenance"]["kind"], "neighborhood");
        assert_eq!(l["provenance"]["parent"], ids[0]);
        assert!(l["score"].is_object());
    }

    let (status, v) = call_json(
        &svc,
        "POST",
        &format!("{base}/vary"),
        Some(json!({"line_id": ids[0], "mode": "interpolate", "other_line_id": ids[1], "steps": 5})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let lines = v["lines"].as_array().unwrap();
    assert_eq!(lines.len(), 5);
    let session = svc.get(&id).unwrap();
    let z = |lid: u64| session.line(lid).unwrap().provenance.latent().to_vec();
    let direct = svc.models().vae.interpolate(&z(ids[0]), &z(ids[1]), 5, None).unwrap();
    for (got, want) in lines.iter().zip(&direct) {
        assert_eq!(got["text"].as_str().unwrap(), want.text);
        assert_eq!(got["provenance"]["other_parent"], ids[1]);
    }

    for (body, code) in [
        (json!({"line_id": 12345, "mode": "neighborhood"}), StatusCode::NOT_FOUND),
        (json!({"line_id": ids[0], "mode": "interpolate"}), StatusCode::BAD_REQUEST),
        (json!({"line_id": ids[0], "mode": "neighborhood", "radius": 0.0}), StatusCode::BAD_REQUEST),
        (json!({"line_id": ids[0], "mode": "interpolate", "other_line_id": ids[1], "steps": 1}), StatusCode::BAD_REQUEST),
        (json!({"line_id": ids[0], "mode": "sideways"}), StatusCode::BAD_REQUEST),
    ] {
        let (status, _) = call_json(&svc, "POST", &format!("{base}/vary"), Some(body.clone())).await;
        assert_eq!(status, code, "{body}");
    }
}

#[tokio::test]
async fn export_survives_restart_and_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let id = new_session(&svc).await;
    let base = format!("/sessions/{id}");
    let ids = pool_ids(&svc, &id, 30, 7).await;
    let chosen: Vec<u64> = ids.iter().rev().take(5).copied().collect();
    for &l in &chosen {
        call_json(&svc, "POST", &format!("{base}/pin"), Some(json!({"line_id": l}))).await;
    }
    call_json(&svc, "PUT", &format!("{base}/arrangement"), Some(json!({"line_ids": chosen}))).await;
    let (status, text) = call(&svc, "GET", &format!("{base}/export?format=text"), None).await;
    assert_eq!(status, StatusCode::OK);
    let text = String::from_utf8(text).unwrap();
    let session = svc.get(&id).unwrap();
    let expected: Vec<&str> = chosen.iter().map(|&l| session.line(l).unwrap().text.as_str()).collect();
    assert_eq!(text, expected.join("\n"));

    let (_, json_doc) = call(&svc, "GET", &format!("{base}/export?format=json"), None).await;
    let json_doc = String::from_utf8(json_doc).unwrap();
    assert_eq!(CurationSession::from_json(&json_doc).unwrap().to_json(), json_doc);

    drop(svc);
    let restarted = service(dir.path());
    let (_, again) = call(&restarted, "GET", &format!("{base}/export?format=text"), None).await;
    assert_eq!(String::from_utf8(again).unwrap(), text);
    let (_, again) = call(&restarted, "GET", &format!("{base}/export?format=json"), None).await;
    assert_eq!(String::from_utf8(again).unwrap(), json_doc);
}

#[tokio::test]
async fn malformed_json_is_a_bad_request() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let id = new_session(&svc).await;
    let req = Request::builder()
        .method("POST")
        .uri(format!("/sessions/{id}/pin"))
        .header("content-type", "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let resp = router(svc.clone()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
    let body: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(body["error"], "bad_params");
}

#[test]
fn sessions_are_independent_under_concurrency() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let ids: Vec<String> = (0..3)
        .map(|_| svc.create_session(Default::default()).unwrap().id)
        .collect();
    std::thread::scope(|scope| {
        for (k, id) in ids.iter().enumerate() {
            let svc = svc.clone();
            scope.spawn(move || {
                for round in 0..3 {
                    let req = seedline_service::PoolRequest {
                        n: 10,
                        temperature: 1.0,
                        seed: (k * 10 + round) as u64,
                        apply_band: false,
                        tag: None,
                    };
                    svc.generate_pool(id, &req).unwrap();
                }
            });
        }
    });
    for id in &ids {
        let s = svc.get(id).unwrap();
        s.check_invariants().unwrap();
        let on_disk = svc.store().load(id).unwrap();
        assert_eq!(on_disk, s);
    }
}
