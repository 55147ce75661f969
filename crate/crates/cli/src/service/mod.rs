//! HTTP job API for the browser studio.
//!
//! `POST /api/jobs`, `GET /api/jobs/{id}`, `GET /api/jobs/{id}/samples/{k}`,
//! `GET /api/models`. Images travel as base64 P5/P6 pixmaps in JSON and as
//! raw pixmap bytes from the samples endpoint.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use ilvr_core::sampler::IlvrSampler;
use ilvr_core::tensorio::decode_pixmap;
use ilvr_core::{Kernel, Schedule};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};

pub mod jobs;
pub mod registry;

pub use jobs::{JobSnapshot, JobSpec, JobState, JobStore};
pub use registry::{ModelEntry, ModelInfo, Registry};

use crate::args::ServeArgs;
use crate::error::{CliError, CliResult};

/// Largest `count` one job may request.
pub const MAX_COUNT: usize = 64;

/// Service-assigned seeds stay below 2^53 so browsers read them exactly.
const ASSIGNED_SEED_BITS: u32 = 53;

pub struct AppState {
    pub registry: Registry,
    pub store: JobStore,
}

impl AppState {
    pub fn new(registry: Registry, sched: Schedule, workers: usize, run_dir: Option<std::path::PathBuf>) -> Self {
        Self {
            registry,
            store: JobStore::start(Arc::new(sched), workers, run_dir),
        }
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get()).min(4)
}

#[derive(Debug, Clone, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub model: String,
    /// Base64 P5/P6 pixmap.
    pub reference: String,
    pub factor: usize,
    #[serde(default = "default_kernel")]
    pub kernel: Kernel,
    #[serde(default)]
    pub stop_step: usize,
    #[serde(default = "default_count")]
    pub count: usize,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_kernel() -> Kernel {
    Kernel::Bicubic
}

fn default_count() -> usize {
    4
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct SubmitResponse {
    pub id: String,
    pub state: JobState,
}

#[derive(Debug, Serialize)]
struct ProgressView {
    t: usize,
    timesteps: usize,
    completed: usize,
    count: usize,
}

#[derive(Debug, Serialize)]
struct SampleView {
    index: usize,
    image: String,
    lowfreq_error: f64,
}

#[derive(Debug, Serialize)]
struct ResultsView {
    samples: Vec<SampleView>,
    diversity: Option<f64>,
}

#[derive(Debug, Serialize)]
struct JobView<'a> {
    id: &'a str,
    state: JobState,
    model: &'a str,
    factor: usize,
    kernel: Kernel,
    stop_step: usize,
    count: usize,
    seed: u64,
    progress: ProgressView,
    #[serde(skip_serializing_if = "Option::is_none")]
    results: Option<ResultsView>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<&'a str>,
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = serde_json::json!({ "error": self.message });
        (self.status, Json(body)).into_response()
    }
}

/// Checks a request against the registry and schedule; nothing is queued
/// unless this succeeds.
pub fn validate(state: &AppState, req: JobRequest) -> Result<JobSpec, ApiError> {
    let model = state
        .registry
        .get(&req.model)
        .ok_or_else(|| ApiError::not_found(format!("unknown model {:?}", req.model)))?;
    if req.count == 0 || req.count > MAX_COUNT {
        return Err(ApiError::bad_request(format!("count must be in 1..={MAX_COUNT}")));
    }
    let bytes = BASE64
        .decode(req.reference.trim())
        .map_err(|e| ApiError::bad_request(format!("reference is not base64: {e}")))?;
    let reference = decode_pixmap(&bytes).map_err(|e| ApiError::bad_request(format!("reference: {e}")))?;
    let spec = JobSpec {
        model,
        reference,
        factor: req.factor,
        kernel: req.kernel,
        stop_step: req.stop_step,
        count: req.count,
        seed: req
            .seed
            .unwrap_or_else(|| rand::random::<u64>() >> (64 - ASSIGNED_SEED_BITS)),
    };
    IlvrSampler::new(&spec.model.model, state.store.schedule(), spec.ilvr_config())
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    Ok(spec)
}

async fn submit(
    State(state): State<Arc<AppState>>,
    body: Result<Json<JobRequest>, JsonRejection>,
) -> Result<(StatusCode, Json<SubmitResponse>), ApiError> {
    let Json(req) = body.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let spec = validate(&state, req)?;
    let id = state.store.submit(spec);
    Ok((
        StatusCode::ACCEPTED,
        Json(SubmitResponse {
            id,
            state: JobState::Queued,
        }),
    ))
}

fn job_view(snap: &JobSnapshot, timesteps: usize) -> serde_json::Value {
    let results = snap.results.as_ref().map(|r| ResultsView {
        samples: r
            .samples
            .iter()
            .map(|s| SampleView {
                index: s.index,
                image: BASE64.encode(&s.pixmap),
                lowfreq_error: s.lowfreq_error,
            })
            .collect(),
        diversity: r.diversity,
    });
    let view = JobView {
        id: &snap.id,
        state: snap.state,
        model: &snap.spec.model.id,
        factor: snap.spec.factor,
        kernel: snap.spec.kernel,
        stop_step: snap.spec.stop_step,
        count: snap.spec.count,
        seed: snap.spec.seed,
        progress: ProgressView {
            t: snap.t,
            timesteps,
            completed: snap.completed,
            count: snap.spec.count,
        },
        results,
        error: snap.error.as_deref(),
    };
    serde_json::to_value(view).expect("job view serializes")
}

async fn get_job(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let snap = state
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))?;
    Ok(Json(job_view(&snap, state.store.schedule().steps())))
}

async fn get_sample(
    State(state): State<Arc<AppState>>,
    Path((id, k)): Path<(String, usize)>,
) -> Result<Response, ApiError> {
    let snap = state
        .store
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id:?}")))?;
    let Some(results) = &snap.results else {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("job {id} is not done")));
    };
    let sample = results
        .samples
        .get(k)
        .ok_or_else(|| ApiError::not_found(format!("job {id} has no sample {k}")))?;
    let mime = if snap.spec.reference.shape()[0] == 1 {
        "image/x-portable-graymap"
    } else {
        "image/x-portable-pixmap"
    };
    Ok(([(header::CONTENT_TYPE, mime)], sample.pixmap.clone()).into_response())
}

async fn list_models(State(state): State<Arc<AppState>>) -> Json<Vec<ModelInfo>> {
    Json(state.registry.infos(state.store.schedule().steps()))
}

pub fn router(state: Arc<AppState>, allow_origin: Option<&str>) -> CliResult<Router> {
    let origin = match allow_origin {
        Some(o) => {
            AllowOrigin::exact(HeaderValue::from_str(o).map_err(|e| CliError::usage(format!("--allow-origin: {e}")))?)
        }
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/api/jobs", post(submit))
        .route("/api/jobs/{id}", get(get_job))
        .route("/api/jobs/{id}/samples/{k}", get(get_sample))
        .route("/api/models", get(list_models))
        .layer(cors)
        .with_state(state))
}

/// Runs the service until ctrl-c.
pub async fn serve(args: &ServeArgs) -> CliResult<()> {
    let (registry, skipped) = Registry::scan(&args.model_dir)?;
    for name in &skipped {
        eprintln!("skipping {name}: not image-shaped");
    }
    if registry.is_empty() {
        return Err(CliError::data(format!(
            "no image-shaped models in {}",
            args.model_dir.display()
        )));
    }
    let sched = args.schedule.config().build()?;
    let workers = args.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(CliError::usage("--workers must be at least 1"));
    }
    let n_models = registry.len();
    let state = Arc::new(AppState::new(registry, sched, workers, args.run_dir.clone()));
    let app = router(Arc::clone(&state), args.allow_origin.as_deref())?;
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
    eprintln!(
        "serving {n_models} model(s) on http://{} with {workers} worker(s)",
        listener.local_addr()?
    );
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
