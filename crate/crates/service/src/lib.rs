//! HTTP service for interactive coarse-to-fine refinement.
//!
//! Clients upload a probability map, open a session from a coarse polygon
//! and step the morphological level-set evolution, receiving contours after
//! every request. Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/api/v1/maps` | upload FPM1/PGM/PPM bytes, id = SHA-256 of the body |
//! | GET | `/api/v1/maps/{id}` | original bytes |
//! | POST | `/api/v1/sessions` | `{prob_map_id, init_polygon, params?}` |
//! | GET | `/api/v1/sessions/{id}` | state; `?include=mask` adds a run-length mask |
//! | POST | `/api/v1/sessions/{id}/step` | `{steps: 1..=500}`; `changed` is false once every step repeated one of the two previous masks |
//! | POST | `/api/v1/sessions/{id}/reset` | `{polygon?, params?}` |
//! | GET | `/healthz` | `{"status":"ok"}` |

mod error;
mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use contourforge::levelset::{compute_g, smoothed_boundary, EmbeddingState, EvolutionParams, Evolver, StallTracker};
use contourforge::raster::{mask_to_boundary, mask_to_contours, polygon_to_mask};
use contourforge::{BinaryMask, Polygon};
use dashmap::DashMap;
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub use error::ApiError;
pub use store::{content_id, Session, SessionStore, StoredMap};

/// Largest `steps` accepted by one step request.
pub const MAX_STEPS_PER_REQUEST: i64 = 500;

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    pub max_body_bytes: usize,
    pub max_sessions: usize,
    pub session_ttl: Duration,
    pub cors_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            max_body_bytes: 16 * 1024 * 1024,
            max_sessions: 64,
            session_ttl: Duration::from_secs(30 * 60),
            cors_origin: None,
        }
    }
}

pub struct AppState {
    maps: DashMap<String, Arc<StoredMap>>,
    sessions: Mutex<SessionStore>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            maps: DashMap::new(),
            sessions: Mutex::new(SessionStore::new(config.max_sessions, config.session_ttl)),
            config,
        })
    }

    /// Stores a decoded map; returns it and whether it was new.
    pub fn insert_map(&self, bytes: Vec<u8>) -> contourforge::Result<(Arc<StoredMap>, bool)> {
        let id = content_id(&bytes);
        if let Some(existing) = self.maps.get(&id) {
            return Ok((existing.clone(), false));
        }
        let map = Arc::new(StoredMap::decode(bytes)?);
        let entry = self.maps.entry(id).or_insert(map);
        Ok((entry.clone(), true))
    }

    /// Loads every `.fpm`, `.pgm` and `.ppm` file of `dir`; returns
    /// `(file name, map id)` pairs in name order.
    pub fn load_dir(&self, dir: &Path) -> contourforge::Result<Vec<(String, String)>> {
        let mut files: Vec<_> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| matches!(e, "fpm" | "pgm" | "ppm"))
            })
            .collect();
        files.sort();
        let mut loaded = Vec::new();
        for path in files {
            let (map, _) = self.insert_map(std::fs::read(&path)?)?;
            let name = path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            loaded.push((name, map.id.clone()));
        }
        Ok(loaded)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session store poisoned").len()
    }

    /// Shared handle to a session, e.g. to hold its lock from outside.
    #[doc(hidden)]
    pub fn session_handle(&self, id: &str) -> Option<Arc<tokio::sync::Mutex<Session>>> {
        self.sessions.lock().expect("session store poisoned").get(id)
    }

    fn session(&self, id: &str) -> Result<store::SharedSession, ApiError> {
        self.sessions
            .lock()
            .expect("session store poisoned")
            .get(id)
            .ok_or_else(|| ApiError::not_found("session", id))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    let mut app = Router::new()
        .route("/healthz", get(healthz))
        .route("/api/v1/maps", post(upload_map))
        .route("/api/v1/maps/{id}", get(download_map))
        .route("/api/v1/sessions", post(create_session))
        .route("/api/v1/sessions/{id}", get(get_session))
        .route("/api/v1/sessions/{id}/step", post(step_session))
        .route("/api/v1/sessions/{id}/reset", post(reset_session))
        .layer(DefaultBodyLimit::max(state.config.max_body_bytes));
    if let Some(origin) = &state.config.cors_origin {
        let allow = match HeaderValue::from_str(origin) {
            Ok(v) if origin != "*" => AllowOrigin::exact(v),
            _ => AllowOrigin::any(),
        };
        app = app.layer(
            CorsLayer::new()
                .allow_origin(allow)
                .allow_methods([Method::GET, Method::POST])
                .allow_headers([header::CONTENT_TYPE]),
        );
    }
    app.with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    serve_listener(tokio::net::TcpListener::bind(addr).await?, state).await
}

/// Serves on an already bound listener until Ctrl-C.
pub async fn serve_listener(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

#[derive(Serialize)]
struct MapInfo {
    map_id: String,
    format: &'static str,
    width: usize,
    height: usize,
    channels: usize,
}

async fn upload_map(State(app): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    if body.is_empty() {
        return Err(ApiError::bad_request("empty body"));
    }
    let (map, created) = app
        .insert_map(body.to_vec())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    let status = if created { StatusCode::CREATED } else { StatusCode::OK };
    let info = MapInfo {
        map_id: map.id.clone(),
        format: map.format,
        width: map.field.width(),
        height: map.field.height(),
        channels: map.field.channels(),
    };
    Ok((status, Json(info)))
}

async fn download_map(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<impl IntoResponse, ApiError> {
    let map = app
        .maps
        .get(&id)
        .map(|m| m.clone())
        .ok_or_else(|| ApiError::not_found("map", &id))?;
    Ok(([(header::CONTENT_TYPE, map.content_type())], map.bytes.clone()))
}

/// Evolution parameters a client may set; omitted fields keep their value.
#[derive(Clone, Copy, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsPatch {
    lambda: Option<f64>,
    c: Option<f64>,
    mu: Option<u32>,
    balloon_threshold: Option<f64>,
}

impl ParamsPatch {
    fn apply(self, base: EvolutionParams) -> Result<EvolutionParams, ApiError> {
        let p = EvolutionParams {
            lambda: self.lambda.unwrap_or(base.lambda),
            c: self.c.unwrap_or(base.c),
            mu: self.mu.unwrap_or(base.mu),
            balloon_threshold: self.balloon_threshold.unwrap_or(base.balloon_threshold),
            ..base
        };
        if !p.lambda.is_finite() {
            return Err(ApiError::unprocessable("lambda must be finite"));
        }
        p.validate().map_err(|e| ApiError::unprocessable(e.to_string()))?;
        Ok(p)
    }
}

#[derive(Serialize)]
struct ParamsView {
    lambda: f64,
    c: f64,
    mu: u32,
    balloon_threshold: f64,
}

impl From<&EvolutionParams> for ParamsView {
    fn from(p: &EvolutionParams) -> Self {
        Self {
            lambda: p.lambda,
            c: p.c,
            mu: p.mu,
            balloon_threshold: p.balloon_threshold,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    prob_map_id: String,
    init_polygon: serde_json::Value,
    #[serde(default)]
    params: Option<ParamsPatch>,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResetRequest {
    #[serde(default)]
    polygon: Option<serde_json::Value>,
    #[serde(default)]
    params: Option<ParamsPatch>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StepRequest {
    steps: i64,
}

#[derive(Deserialize)]
struct GetQuery {
    include: Option<String>,
}

#[derive(Serialize)]
struct RleMask {
    width: usize,
    height: usize,
    rle: Vec<usize>,
}

#[derive(Serialize)]
struct SessionView {
    session_id: String,
    map_id: String,
    width: usize,
    height: usize,
    step: usize,
    converged: bool,
    params: ParamsView,
    contours: Vec<Polygon>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mask: Option<RleMask>,
}

#[derive(Serialize)]
struct StepView {
    session_id: String,
    step: usize,
    steps_applied: usize,
    changed: bool,
    converged: bool,
    contours: Vec<Polygon>,
}

fn view(s: &Session, include_mask: bool) -> SessionView {
    SessionView {
        session_id: s.id.clone(),
        map_id: s.map.id.clone(),
        width: s.map.field.width(),
        height: s.map.field.height(),
        step: s.state.step,
        converged: s.converged(),
        params: (&s.params).into(),
        contours: mask_to_contours(&s.state.u),
        mask: include_mask.then(|| RleMask {
            width: s.state.u.width(),
            height: s.state.u.height(),
            rle: s.state.u.run_lengths(),
        }),
    }
}

/// Closed polygon inside the map whose rasterization covers a pixel centre.
fn initial_mask(raw: serde_json::Value, map: &StoredMap) -> Result<(Polygon, BinaryMask), ApiError> {
    let polygon: Polygon =
        serde_json::from_value(raw).map_err(|e| ApiError::unprocessable(format!("invalid polygon: {e}")))?;
    if !polygon.is_closed() {
        return Err(ApiError::unprocessable("polygon must be closed"));
    }
    let (w, h) = (map.field.width() as f64, map.field.height() as f64);
    if polygon
        .vertices()
        .iter()
        .any(|&[x, y]| !(-0.5..=w - 0.5).contains(&x) || !(-0.5..=h - 0.5).contains(&y))
    {
        return Err(ApiError::unprocessable("polygon leaves the map bounds"));
    }
    if polygon.signed_area() == 0.0 {
        return Err(ApiError::unprocessable("degenerate polygon: zero area"));
    }
    let mask = polygon_to_mask(&polygon, map.field.width(), map.field.height())
        .map_err(|e| ApiError::unprocessable(e.to_string()))?;
    if !mask.any() {
        return Err(ApiError::unprocessable("degenerate polygon: covers no pixel centre"));
    }
    Ok((polygon, mask))
}

/// The initial mask doubles as the ground truth of the `λ` term.
fn build_evolver(map: &StoredMap, initial: &BinaryMask, params: &EvolutionParams) -> Result<Evolver, ApiError> {
    let pred = if map.field.channels() == 1 {
        map.field.clone()
    } else {
        return Err(ApiError::unprocessable(format!(
            "probability map must have one channel, got {}",
            map.field.channels()
        )));
    };
    let y = if params.lambda > 0.0 {
        Some(
            smoothed_boundary(&mask_to_boundary(initial), params.sigma_y)
                .map_err(|e| ApiError::unprocessable(e.to_string()))?,
        )
    } else {
        None
    };
    let g = compute_g(&pred, y.as_ref(), params.lambda).map_err(|e| ApiError::unprocessable(e.to_string()))?;
    Evolver::new(&g, *params).map_err(|e| ApiError::unprocessable(e.to_string()))
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> Result<impl IntoResponse, ApiError> {
    let req: CreateRequest = error::parse_json(&body)?;
    let map = app
        .maps
        .get(&req.prob_map_id)
        .map(|m| m.clone())
        .ok_or_else(|| ApiError::not_found("map", &req.prob_map_id))?;
    let params = req
        .params
        .unwrap_or_default()
        .apply(EvolutionParams::coarse_to_fine())?;
    let (polygon, mask) = initial_mask(req.init_polygon, &map)?;
    let evolver = build_evolver(&map, &mask, &params)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = Session {
        id: id.clone(),
        map,
        polygon,
        params,
        evolver,
        tracker: StallTracker::new(&mask),
        state: EmbeddingState::new(mask),
    };
    let body = view(&session, false);
    app.sessions
        .lock()
        .expect("session store poisoned")
        .insert(id, Arc::new(tokio::sync::Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<GetQuery>,
) -> Result<impl IntoResponse, ApiError> {
    let include_mask = match q.include.as_deref() {
        None | Some("") => false,
        Some("mask") => true,
        Some(other) => return Err(ApiError::unprocessable(format!("unknown include {other:?}"))),
    };
    let session = app.session(&id)?;
    let guard = session.lock().await;
    Ok(Json(view(&guard, include_mask)))
}

async fn step_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: StepRequest = error::parse_json(&body)?;
    if !(1..=MAX_STEPS_PER_REQUEST).contains(&req.steps) {
        return Err(ApiError::unprocessable(format!(
            "steps must lie in 1..={MAX_STEPS_PER_REQUEST}, got {}",
            req.steps
        )));
    }
    let session = app.session(&id)?;
    let mut guard = session
        .try_lock_owned()
        .map_err(|_| ApiError::conflict("a step request for this session is in flight"))?;
    let steps = req.steps as usize;
    let out = tokio::task::spawn_blocking(move || -> Result<StepView, ApiError> {
        let s = &mut *guard;
        let mut applied = 0;
        let mut changed = false;
        while applied < steps && !s.converged() {
            s.evolver
                .step(&mut s.state)
                .map_err(|e| ApiError::internal(e.to_string()))?;
            applied += 1;
            changed |= s.tracker.record(&s.state.u);
        }
        Ok(StepView {
            session_id: s.id.clone(),
            step: s.state.step,
            steps_applied: applied,
            changed,
            converged: s.converged(),
            contours: mask_to_contours(&s.state.u),
        })
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}

async fn reset_session(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<impl IntoResponse, ApiError> {
    let req: ResetRequest = if body.iter().all(u8::is_ascii_whitespace) {
        ResetRequest::default()
    } else {
        error::parse_json(&body)?
    };
    let session = app.session(&id)?;
    let mut guard = session
        .try_lock_owned()
        .map_err(|_| ApiError::conflict("a step request for this session is in flight"))?;
    let s = &mut *guard;
    let params = req.params.unwrap_or_default().apply(s.params)?;
    let raw = req
        .polygon
        .unwrap_or_else(|| serde_json::to_value(&s.polygon).expect("polygon serializes"));
    let (polygon, mask) = initial_mask(raw, &s.map)?;
    let evolver = build_evolver(&s.map, &mask, &params)?;
    s.polygon = polygon;
    s.params = params;
    s.evolver = evolver;
    s.tracker = StallTracker::new(&mask);
    s.state = EmbeddingState::new(mask);
    Ok(Json(view(s, false)))
}
