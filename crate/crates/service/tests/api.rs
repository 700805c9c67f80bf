use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use contourforge::raster::io::{encode_fpm, encode_pgm_gray};
use contourforge::synthetic::{mean_boundary_radius, ring_fixture};
use contourforge::{BinaryMask, ScalarField};
use contourforge_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

struct Client {
    state: Arc<AppState>,
}

impl Client {
    fn new() -> Self {
        Self::with_config(ServiceConfig::default())
    }

    fn with_config(config: ServiceConfig) -> Self {
        Self {
            state: AppState::new(config),
        }
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Vec<u8>, axum::http::HeaderMap) {
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let headers = resp.headers().clone();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
        (status, bytes, headers)
    }

    async fn get(&self, uri: &str) -> (StatusCode, Value) {
        let (s, b, _) = self.send(Request::get(uri).body(Body::empty()).unwrap()).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.post_raw(uri, serde_json::to_vec(&body).unwrap()).await
    }

    async fn post_raw(&self, uri: &str, body: Vec<u8>) -> (StatusCode, Value) {
        let req = Request::post(uri)
            .header("content-type", "application/json")
            .body(Body::from(body))
            .unwrap();
        let (s, b, _) = self.send(req).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn upload(&self, bytes: Vec<u8>) -> (StatusCode, Value) {
        let req = Request::post("/api/v1/maps").body(Body::from(bytes)).unwrap();
        let (s, b, _) = self.send(req).await;
        (s, serde_json::from_slice(&b).unwrap_or(Value::Null))
    }

    async fn ring_session(&self) -> String {
        let (_, map) = self.upload(encode_fpm(&ring_fixture().pred)).await;
        let (status, body) = self
            .post(
                "/api/v1/sessions",
                json!({"prob_map_id": map["map_id"], "init_polygon": square(28.0, 35.0)}),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        body["session_id"].as_str().unwrap().to_string()
    }

    async fn mask(&self, id: &str) -> BinaryMask {
        let (status, body) = self.get(&format!("/api/v1/sessions/{id}?include=mask")).await;
        assert_eq!(status, StatusCode::OK);
        let m = &body["mask"];
        let runs: Vec<usize> = serde_json::from_value(m["rle"].clone()).unwrap();
        BinaryMask::from_run_lengths(
            m["width"].as_u64().unwrap() as usize,
            m["height"].as_u64().unwrap() as usize,
            &runs,
        )
        .unwrap()
    }
}

fn square(lo: f64, hi: f64) -> Value {
    json!({"closed": true, "vertices": [[lo, lo], [hi, lo], [hi, hi], [lo, hi]]})
}

#[tokio::test]
async fn healthz_is_ok() {
    let (status, body) = Client::new().get("/healthz").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"status": "ok"}));
}

#[tokio::test]
async fn map_upload_is_content_addressed() {
    let c = Client::new();
    let bytes = encode_fpm(&ScalarField::filled(4, 3, 1, 0.25));
    let (s1, b1) = c.upload(bytes.clone()).await;
    assert_eq!(s1, StatusCode::CREATED);
    assert_eq!(b1["width"], 4);
    assert_eq!(b1["format"], "fpm");
    let (s2, b2) = c.upload(bytes.clone()).await;
    assert_eq!(s2, StatusCode::OK);
    assert_eq!(b1["map_id"], b2["map_id"]);

    let id = b1["map_id"].as_str().unwrap();
    let (s, raw, headers) = c
        .send(Request::get(format!("/api/v1/maps/{id}")).body(Body::empty()).unwrap())
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(raw, bytes);
    assert_eq!(headers["content-type"], "application/octet-stream");
    assert_eq!(c.get("/api/v1/maps/nope").await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn map_upload_accepts_pgm() {
    let c = Client::new();
    let pgm = encode_pgm_gray(&ScalarField::filled(5, 5, 1, 0.5), 0);
    let (s, b) = c.upload(pgm).await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(b["format"], "pgm");
    assert_eq!(b["channels"], 1);
}

#[tokio::test]
async fn malformed_and_oversized_maps_are_rejected() {
    let c = Client::with_config(ServiceConfig {
        max_body_bytes: 1024,
        ..Default::default()
    });
    let bytes = encode_fpm(&ScalarField::filled(4, 4, 1, 0.5));
    let (s, body) = c.upload(bytes[..6].to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("byte"), "{body}");
    assert_eq!(c.upload(Vec::new()).await.0, StatusCode::BAD_REQUEST);
    let big = encode_fpm(&ScalarField::filled(32, 32, 1, 0.5));
    assert_eq!(c.upload(big).await.0, StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test]
async fn session_creation_contract() {
    let c = Client::new();
    let (_, map) = c.upload(encode_fpm(&ring_fixture().pred)).await;
    let id = map["map_id"].clone();

    let triangle = json!({"closed": true, "vertices": [[20, 20], [40, 22], [30, 40]]});
    let (s, body) = c
        .post("/api/v1/sessions", json!({"prob_map_id": id, "init_polygon": triangle}))
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body["step"], 0);
    assert_eq!(body["contours"].as_array().unwrap().len(), 1);
    assert_eq!(body["params"]["lambda"], 0.0);
    assert_eq!(body["params"]["c"], 1.0);
    assert_eq!(body["params"]["mu"], 1);

    let two = json!({"closed": true, "vertices": [[1, 1], [5, 5]]});
    let (s, _) = c
        .post("/api/v1/sessions", json!({"prob_map_id": id, "init_polygon": two}))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let outside = square(50.0, 70.0);
    let (s, _) = c
        .post("/api/v1/sessions", json!({"prob_map_id": id, "init_polygon": outside}))
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, _) = c
        .post(
            "/api/v1/sessions",
            json!({"prob_map_id": "missing", "init_polygon": square(1.0, 5.0)}),
        )
        .await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    let (s, _) = c
        .post(
            "/api/v1/sessions",
            json!({"prob_map_id": id, "init_polygon": square(1.0, 5.0), "params": {"mu": 9}}),
        )
        .await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);

    let (s, _) = c.post_raw("/api/v1/sessions", b"{not json".to_vec()).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);

    let (s, body) = c
        .post(
            "/api/v1/sessions",
            json!({"prob_map_id": id, "init_polygon": square(1.0, 5.0), "params": {"lambda": 0.5, "c": -1}}),
        )
        .await;
    assert_eq!(s, StatusCode::CREATED);
    assert_eq!(body["params"]["lambda"], 0.5);
    assert_eq!(body["params"]["mu"], 1);
}

#[tokio::test]
async fn step_bounds_and_unknown_session() {
    let c = Client::new();
    let id = c.ring_session().await;
    for n in [0, 501, -1] {
        let (s, _) = c
            .post(&format!("/api/v1/sessions/{id}/step"), json!({"steps": n}))
            .await;
        assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "steps {n}");
    }
    let (s, _) = c.post("/api/v1/sessions/nope/step", json!({"steps": 1})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(c.get("/api/v1/sessions/nope").await.0, StatusCode::NOT_FOUND);
    let (s, _) = c.post("/api/v1/sessions/nope/reset", json!({})).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn steps_compose() {
    let c = Client::new();
    let a = c.ring_session().await;
    let b = c.ring_session().await;
    for _ in 0..2 {
        c.post(&format!("/api/v1/sessions/{a}/step"), json!({"steps": 1})).await;
    }
    let (_, body) = c.post(&format!("/api/v1/sessions/{b}/step"), json!({"steps": 2})).await;
    assert_eq!(body["step"], 2);
    assert_eq!(c.mask(&a).await, c.mask(&b).await);
}

#[tokio::test]
async fn ring_session_converges_onto_the_ridge() {
    let c = Client::new();
    let id = c.ring_session().await;
    let (s, body) = c
        .post(&format!("/api/v1/sessions/{id}/step"), json!({"steps": 50}))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert!(body["steps_applied"].as_u64().unwrap() <= 50);
    let r = mean_boundary_radius(&c.mask(&id).await, ring_fixture().centers[0]).unwrap();
    assert!((9.0..=11.0).contains(&r), "radius {r}");

    // stepping one at a time eventually reports no change
    let mut halted = false;
    for _ in 0..20 {
        let (_, body) = c
            .post(&format!("/api/v1/sessions/{id}/step"), json!({"steps": 1}))
            .await;
        if body["changed"] == false {
            halted = true;
            break;
        }
    }
    assert!(halted);
}

#[tokio::test]
async fn step_counter_and_reset() {
    let c = Client::new();
    let id = c.ring_session().await;
    c.post(&format!("/api/v1/sessions/{id}/step"), json!({"steps": 3}))
        .await;
    let (_, body) = c.get(&format!("/api/v1/sessions/{id}")).await;
    assert_eq!(body["step"], 3);
    assert!(body.get("mask").is_none());

    let (s, body) = c
        .post(&format!("/api/v1/sessions/{id}/reset"), json!({"params": {"mu": 2}}))
        .await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body["params"]["mu"], 2);
    let (_, body) = c.get(&format!("/api/v1/sessions/{id}")).await;
    assert_eq!(body["step"], 0);
    assert_eq!(body["params"]["c"], 1.0);

    let (s, _) = c.post_raw(&format!("/api/v1/sessions/{id}/reset"), Vec::new()).await;
    assert_eq!(s, StatusCode::OK);
    let (s, _) = c
        .post(
            &format!("/api/v1/sessions/{id}/reset"),
            json!({"polygon": square(10.0, 20.0)}),
        )
        .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test]
async fn concurrent_step_is_a_conflict() {
    let c = Client::new();
    let id = c.ring_session().await;
    let handle = c.state.session_handle(&id).unwrap();
    let held = handle.lock().await;
    let (s, body) = c
        .post(&format!("/api/v1/sessions/{id}/step"), json!({"steps": 1}))
        .await;
    assert_eq!(s, StatusCode::CONFLICT, "{body}");
    drop(held);
    let (s, _) = c
        .post(&format!("/api/v1/sessions/{id}/step"), json!({"steps": 1}))
        .await;
    assert_eq!(s, StatusCode::OK);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sessions_are_isolated() {
    let c = Client::new();
    let ids: Vec<String> = vec![c.ring_session().await, c.ring_session().await, c.ring_session().await];
    let (u0, u1) = (
        format!("/api/v1/sessions/{}/step", ids[0]),
        format!("/api/v1/sessions/{}/step", ids[1]),
    );
    let (r1, r2) = tokio::join!(c.post(&u0, json!({"steps": 7})), c.post(&u1, json!({"steps": 7})));
    assert_eq!(r1.0, StatusCode::OK);
    assert_eq!(r2.0, StatusCode::OK);
    c.post(&format!("/api/v1/sessions/{}/step", ids[2]), json!({"steps": 7}))
        .await;
    let reference = c.mask(&ids[2]).await;
    assert_eq!(c.mask(&ids[0]).await, reference);
    assert_eq!(c.mask(&ids[1]).await, reference);
}

#[tokio::test]
async fn lru_and_ttl_eviction() {
    let c = Client::with_config(ServiceConfig {
        max_sessions: 2,
        ..Default::default()
    });
    let first = c.ring_session().await;
    let second = c.ring_session().await;
    c.get(&format!("/api/v1/sessions/{first}")).await;
    let _third = c.ring_session().await;
    assert_eq!(c.get(&format!("/api/v1/sessions/{first}")).await.0, StatusCode::OK);
    assert_eq!(
        c.get(&format!("/api/v1/sessions/{second}")).await.0,
        StatusCode::NOT_FOUND
    );
    assert_eq!(c.state.session_count(), 2);

    let c = Client::with_config(ServiceConfig {
        session_ttl: Duration::from_millis(50),
        ..Default::default()
    });
    let id = c.ring_session().await;
    tokio::time::sleep(Duration::from_millis(120)).await;
    assert_eq!(c.get(&format!("/api/v1/sessions/{id}")).await.0, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn cors_header_for_configured_origin() {
    let c = Client::with_config(ServiceConfig {
        cors_origin: Some("http://localhost:5173".into()),
        ..Default::default()
    });
    let req = Request::get("/healthz")
        .header("origin", "http://localhost:5173")
        .body(Body::empty())
        .unwrap();
    let (_, _, headers) = c.send(req).await;
    assert_eq!(headers["access-control-allow-origin"], "http://localhost:5173");
}

#[test]
fn load_dir_registers_rasters() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("a.fpm"), encode_fpm(&ScalarField::filled(3, 3, 1, 0.1))).unwrap();
    std::fs::write(dir.join("notes.txt"), b"ignored").unwrap();
    let state = AppState::new(ServiceConfig::default());
    let loaded = state.load_dir(dir).unwrap();
    assert_eq!(loaded.len(), 1);
    assert_eq!(loaded[0].0, "a.fpm");
}
