use crate::jobs::AppState;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sketchfill::optimizer::trace_csv;
use sketchfill::pipeline::{iterate, new_session_id, IterationRequest, PipelineError, SessionState, SessionStatus};
use sketchfill::svg::{parse_svg, serialize_svg};
use std::sync::Arc;
use tower_http::services::{ServeDir, ServeFile};

const FALLBACK_INDEX: &str = include_str!("../assets/index.html");

pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, format!("session {id} not found"))
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.message}))).into_response()
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Precondition { .. } => Self::conflict(e.to_string()),
            PipelineError::UnknownIds(_) | PipelineError::Validation(_) => Self::unprocessable(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/complete", post(start_completion))
        .route("/api/sessions/{id}/sketch", get(get_sketch))
        .route("/api/sessions/{id}/trace", get(get_trace))
        .route("/api/sessions/{id}/iterate", post(iterate_session))
        .with_state(state.clone());
    match state.static_dir.as_ref().filter(|d| d.is_dir()) {
        Some(dir) => api.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => api.fallback(|| async { Html(FALLBACK_INDEX) }),
    }
}

#[derive(Deserialize)]
struct CreateSession {
    prompt: String,
    svg: String,
    seed: Option<u64>,
}

async fn create_session(State(state): State<Arc<AppState>>, Json(body): Json<CreateSession>) -> ApiResult<(StatusCode, Json<Value>)> {
    if body.prompt.trim().is_empty() {
        return Err(ApiError::unprocessable("prompt must not be empty"));
    }
    let input = parse_svg(&body.svg).map_err(|e| ApiError::unprocessable(format!("svg: {e}")))?;
    let mut config = state.engine.config.clone();
    if let Some(seed) = body.seed {
        config.rng_seed = seed;
    }
    let session = SessionState::new(new_session_id(), body.prompt, input, config);
    let id = session.id.clone();
    state.insert(session);
    Ok((StatusCode::CREATED, Json(json!({"id": id}))))
}

fn session(state: &AppState, id: &str) -> ApiResult<SessionState> {
    state.snapshot(id).ok_or_else(|| ApiError::not_found(id))
}

async fn start_completion(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<(StatusCode, Json<Value>)> {
    let (snapshot, job) = match state.claim(&id) {
        Ok(Some(claimed)) => claimed,
        Ok(None) => return Err(ApiError::not_found(&id)),
        Err(status) => return Err(ApiError::conflict(format!("session {id} is {status}; completion needs Created"))),
    };
    let worker = state.clone();
    tokio::task::spawn_blocking(move || worker.run_job(snapshot, job));
    Ok((StatusCode::ACCEPTED, Json(json!({"id": id, "accepted": true}))))
}

#[derive(Serialize)]
struct Progress {
    iteration: usize,
    total: usize,
}

#[derive(Serialize)]
struct SessionView<'a> {
    id: &'a str,
    prompt: &'a str,
    augmented_prompt: Option<&'a str>,
    status: &'a SessionStatus,
    parent: Option<&'a str>,
    seed: u64,
    warnings: &'a [String],
    input_svg: String,
    intermediate_svg: Option<String>,
    final_svg: Option<String>,
    guidance_png: Option<String>,
    loss_trace: &'a [sketchfill::objective::LossBreakdown],
    adjustment_trace: &'a [sketchfill::dsl::AdjustmentStep],
    adjustment_status: Option<&'a sketchfill::dsl::LoopStatus>,
    progress: Option<Progress>,
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = session(&state, &id)?;
    let view = SessionView {
        id: &s.id,
        prompt: &s.prompt,
        augmented_prompt: s.augmented.as_ref().map(|a| a.combined.as_str()),
        status: &s.status,
        parent: s.parent.as_deref(),
        seed: s.seed(),
        warnings: &s.warnings,
        input_svg: serialize_svg(&s.input),
        intermediate_svg: s.intermediate.as_ref().map(serialize_svg),
        final_svg: s.final_sketch.as_ref().map(serialize_svg),
        guidance_png: s.guidance.as_ref().and_then(|g| g.to_png().ok()).map(|png| B64.encode(png)),
        loss_trace: &s.loss_trace,
        adjustment_trace: &s.adjustment_trace,
        adjustment_status: s.adjustment_status.as_ref(),
        progress: state.progress(&id).map(|iteration| Progress {
            iteration,
            total: s.config.iterations,
        }),
    };
    Ok(Json(serde_json::to_value(view).expect("view serializes")))
}

#[derive(Deserialize)]
struct StageQuery {
    stage: Option<String>,
}

async fn get_sketch(State(state): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<StageQuery>) -> ApiResult<Response> {
    let s = session(&state, &id)?;
    let stage = q.stage.as_deref().unwrap_or("final");
    let sketch = match stage {
        "input" => Some(&s.input),
        "intermediate" => s.intermediate.as_ref(),
        "final" => s.final_sketch.as_ref(),
        other => return Err(ApiError::unprocessable(format!("unknown stage {other:?}; use input, intermediate or final"))),
    };
    let sketch = sketch.ok_or_else(|| ApiError::conflict(format!("session {id} is {}; no {stage} sketch yet", s.status)))?;
    Ok(([(header::CONTENT_TYPE, "image/svg+xml")], serialize_svg(sketch)).into_response())
}

async fn get_trace(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = session(&state, &id)?;
    Ok(Json(json!({
        "loss_csv": trace_csv(&s.loss_trace),
        "adjustment": s.adjustment_trace,
        "adjustment_status": s.adjustment_status,
    })))
}

#[derive(Deserialize)]
struct IterateBody {
    #[serde(default)]
    retained_ids: Vec<String>,
    #[serde(default)]
    new_svg: Option<String>,
    prompt: Option<String>,
}

async fn iterate_session(State(state): State<Arc<AppState>>, Path(id): Path<String>, Json(body): Json<IterateBody>) -> ApiResult<(StatusCode, Json<Value>)> {
    let parent = session(&state, &id)?;
    let new_strokes = match body.new_svg.as_deref().filter(|s| !s.trim().is_empty()) {
        Some(svg) => parse_svg(svg).map_err(|e| ApiError::unprocessable(format!("new_svg: {e}")))?,
        None => sketchfill::geom::Sketch::new(parent.input.canvas_w, parent.input.canvas_h),
    };
    let request = IterationRequest {
        retained_ids: body.retained_ids,
        new_strokes,
        prompt: body.prompt,
    };
    let child = iterate(&parent, &request, new_session_id())?;
    let child_id = child.id.clone();
    state.insert(child);
    Ok((StatusCode::CREATED, Json(json!({"id": child_id}))))
}
