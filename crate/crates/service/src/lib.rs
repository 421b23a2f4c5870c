//! HTTP front end for drag editing.
//!
//! Scenes are uploaded once and kept in memory as sessions. Renders, picks
//! and point-cloud previews read immutable snapshots; deform and refine run
//! as background jobs, one per session at a time, and publish their result
//! by swapping the session's deformed scene.

pub mod session;

use std::net::SocketAddr;
use std::sync::Arc;

use arapgs_core::pipeline::{run_refine, DeformPlan, PipelineError};
use arapgs_core::render::{depth_at, render};
use arapgs_core::splat_io::{dragspec_from_value, encode_ply, parse_cameras, parse_ply};
use arapgs_core::{GaussianScene, PipelineConfig};
use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

pub use session::{AppState, JobKind, JobRecord, JobStatus, Session};

const UPLOAD_LIMIT: usize = 2 << 30;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: Value,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            body: json!({ "error": message.into() }),
        }
    }

    fn with(mut self, key: &str, value: Value) -> Self {
        self.body[key] = value;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/scenes", post(upload_scene))
        .route("/scenes/{id}", get(scene_info))
        .route("/scenes/{id}/render", get(render_view))
        .route("/scenes/{id}/pick", post(pick))
        .route("/scenes/{id}/pointcloud", get(point_cloud))
        .route("/scenes/{id}/scene", get(scene_file))
        .route("/scenes/{id}/deform", post(start_deform))
        .route("/scenes/{id}/refine", post(start_refine))
        .route("/jobs/{id}", get(job_status))
        .layer(DefaultBodyLimit::max(UPLOAD_LIMIT))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

pub async fn serve(listen: SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(listen).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<Session>> {
    state
        .session(id)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown scene {id}")))
}

fn bad_request(message: impl Into<String>) -> ApiError {
    ApiError::new(StatusCode::BAD_REQUEST, message)
}

async fn upload_scene(State(state): State<Arc<AppState>>, mut form: Multipart) -> ApiResult<Response> {
    let mut ply = None;
    let mut cameras = None;
    while let Some(field) = form.next_field().await.map_err(|e| bad_request(e.body_text()))? {
        let name = field.name().unwrap_or_default().to_string();
        let data = field.bytes().await.map_err(|e| bad_request(e.body_text()))?;
        match name.as_str() {
            "scene" => ply = Some(data),
            "cameras" => cameras = Some(data),
            other => log::debug!("ignoring form field {other:?}"),
        }
    }
    let ply = ply.ok_or_else(|| bad_request("missing form field `scene`"))?;
    let cameras = cameras.ok_or_else(|| bad_request("missing form field `cameras`"))?;
    let session = tokio::task::spawn_blocking(move || {
        let scene = parse_ply(&ply).map_err(|e| bad_request(format!("scene: {e}")))?;
        let text = std::str::from_utf8(&cameras).map_err(|_| bad_request("cameras: not UTF-8"))?;
        let cams = parse_cameras(text).map_err(|e| {
            let err = bad_request(format!("cameras: {e}"));
            match e.pointer() {
                Some(p) => err.with("pointer", json!(p)),
                None => err,
            }
        })?;
        state
            .create_session(scene, cams)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
    Ok((
        StatusCode::CREATED,
        Json(json!({
            "scene_id": session.id,
            "count": session.original.len(),
            "cameras": session.cameras.len(),
        })),
    )
        .into_response())
}

async fn scene_info(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = lookup(&state, &id)?;
    Ok(Json(json!({
        "scene_id": s.id,
        "count": s.original.len(),
        "cameras": s.cameras.len(),
        "has_deformed": s.deformed().is_some(),
        "active_job": s.active_job(),
    })))
}

#[derive(Debug, Default, Clone, Copy, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
enum Which {
    #[default]
    Original,
    Deformed,
}

fn snapshot(s: &Session, which: Which) -> ApiResult<Arc<GaussianScene>> {
    match which {
        Which::Original => Ok(s.original.clone()),
        Which::Deformed => s
            .deformed()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "no deformed scene yet")),
    }
}

#[derive(Deserialize)]
struct RenderQuery {
    cam: usize,
    #[serde(default)]
    which: Which,
}

async fn render_view(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<RenderQuery>,
) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let scene = snapshot(&s, q.which)?;
    let cam = s
        .cameras
        .get(q.cam)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown camera {}", q.cam)))?;
    let background = state.config.render.background;
    let png = tokio::task::spawn_blocking(move || render(&scene, &cam, background).encode_png())
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

#[derive(Deserialize)]
struct PickRequest {
    cam: usize,
    x: u32,
    y: u32,
    #[serde(default)]
    which: Which,
}

async fn pick(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Json<Value>> {
    let s = lookup(&state, &id)?;
    let req: PickRequest = serde_json::from_slice(&body).map_err(|e| bad_request(e.to_string()))?;
    let scene = snapshot(&s, req.which)?;
    let cam = s
        .cameras
        .get(req.cam)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown camera {}", req.cam)))?;
    if req.x >= cam.width || req.y >= cam.height {
        return Err(bad_request(format!("pixel ({}, {}) outside {}x{}", req.x, req.y, cam.width, cam.height)));
    }
    let hit = tokio::task::spawn_blocking(move || depth_at(&scene, &cam, req.x, req.y))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match hit {
        Some(p) => Ok(Json(json!({ "point": [p.x, p.y, p.z] }))),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "no surface under pixel")),
    }
}

#[derive(Deserialize)]
struct WhichQuery {
    #[serde(default)]
    which: Which,
}

async fn point_cloud(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<WhichQuery>,
) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let bytes = match q.which {
        Which::Original => s.preview().to_vec(),
        Which::Deformed => session::point_cloud_bytes(&*snapshot(&s, Which::Deformed)?),
    };
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

async fn scene_file(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<WhichQuery>,
) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let scene = snapshot(&s, q.which)?;
    let bytes = tokio::task::spawn_blocking(move || encode_ply(&scene))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], bytes).into_response())
}

/// Job body: `{"drag": <drag.json>, "config": <partial config>}`. A bare
/// drag spec is accepted too.
fn job_config(state: &AppState, body: &Value) -> ApiResult<PipelineConfig> {
    let mut config = match body.get("config") {
        Some(v) if !v.is_null() => serde_json::from_value(v.clone()).map_err(|e| bad_request(format!("config: {e}")))?,
        _ => state.config.clone(),
    };
    config.apply_env();
    config.validate().map_err(|e| bad_request(format!("config: {e}")))?;
    Ok(config)
}

fn parse_body(body: &Bytes) -> ApiResult<Value> {
    if body.is_empty() {
        return Ok(json!({}));
    }
    serde_json::from_slice(body).map_err(|e| bad_request(e.to_string()))
}

fn conflict(job: String) -> ApiError {
    ApiError::new(StatusCode::CONFLICT, "another edit is in progress").with("job_id", json!(job))
}

fn unprocessable(err: PipelineError) -> ApiError {
    let e = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, err.to_string());
    match err {
        PipelineError::Drag { pointer, .. } => e.with("pointer", json!(pointer)),
        _ => e,
    }
}

async fn start_deform(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let body = parse_body(&body)?;
    let drag_value = body.get("drag").unwrap_or(&body);
    let drag = dragspec_from_value(drag_value).map_err(|e| {
        let err = ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, format!("drag: {e}"));
        match e.pointer() {
            Some(p) => err.with("pointer", json!(p)),
            None => err,
        }
    })?;
    let config = job_config(&state, &body)?;

    let job_id = uuid::Uuid::new_v4().simple().to_string();
    let guard = s.try_begin(&job_id).map_err(conflict)?;
    let original = s.original.clone();
    let (plan, drag, config) = tokio::task::spawn_blocking(move || {
        DeformPlan::prepare(&original, &drag, &config).map(|plan| (plan, drag, config))
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
    .map_err(unprocessable)?;

    let job = state.new_job(&job_id, &s, JobKind::Deform);
    let app = state.clone();
    tokio::task::spawn_blocking(move || {
        let session = guard.session().clone();
        job.lock().expect("job lock").start();
        let max_iters = config.arap.max_iters as f64;
        let progress_job = job.clone();
        let result = plan.execute(&session.original, &drag, &config, |iter, _| {
            progress_job.lock().expect("job lock").progress = 0.9 * iter as f64 / max_iters;
        });
        match result {
            Ok(out) => match session.install(&guard, out.scene) {
                Ok(()) => job.lock().expect("job lock").finish(serde_json::to_value(&out.report).unwrap_or(Value::Null)),
                Err(e) => job.lock().expect("job lock").fail(format!("saving result: {e}")),
            },
            Err(e) => job.lock().expect("job lock").fail(e.to_string()),
        }
        app.save_job(&session, &job);
        drop(guard);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

async fn start_refine(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let s = lookup(&state, &id)?;
    let body = parse_body(&body)?;
    let config = job_config(&state, &body)?;
    if s.cameras.is_empty() {
        return Err(ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "scene has no cameras to refine against"));
    }
    let job_id = uuid::Uuid::new_v4().simple().to_string();
    let guard = s.try_begin(&job_id).map_err(conflict)?;
    let deformed = s
        .deformed()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "no deformed scene to refine"))?;

    let job = state.new_job(&job_id, &s, JobKind::Refine);
    let app = state.clone();
    tokio::task::spawn_blocking(move || {
        let session = guard.session().clone();
        job.lock().expect("job lock").start();
        let progress_job = job.clone();
        let result = run_refine(&session.original, &deformed, &session.cameras, &config, |done, total| {
            progress_job.lock().expect("job lock").progress = 0.99 * done as f64 / total as f64;
        });
        match result {
            Ok(out) => {
                let report = json!({
                    "optimized": out.optimized,
                    "updates": out.updates,
                    "enhancer_fallbacks": out.enhancer_fallbacks,
                    "losses": out.losses,
                });
                match session.install(&guard, out.scene) {
                    Ok(()) => job.lock().expect("job lock").finish(report),
                    Err(e) => job.lock().expect("job lock").fail(format!("saving result: {e}")),
                }
            }
            Err(e) => job.lock().expect("job lock").fail(e.to_string()),
        }
        app.save_job(&session, &job);
        drop(guard);
    });
    Ok((StatusCode::ACCEPTED, Json(json!({ "job_id": job_id }))).into_response())
}

async fn job_status(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<JobRecord>> {
    state
        .job(&id)
        .map(Json)
        .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown job {id}")))
}
