use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::multipart::{Multipart, MultipartRejection};
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use serde::Serialize;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::api_error::ApiError;
use crate::config::ServiceConfig;
use crate::engine::Engine;
use crate::jobs::{Jobs, WorkQueue};
use crate::request;

/// Shared by every handler.
#[derive(Clone)]
pub struct AppState {
    engine: Arc<Engine>,
    queue: Arc<WorkQueue>,
    jobs: Arc<Jobs>,
    config: Arc<ServiceConfig>,
}

impl AppState {
    pub fn new(engine: Engine, config: ServiceConfig) -> Self {
        AppState {
            engine: Arc::new(engine),
            queue: WorkQueue::new(config.workers, config.max_queue),
            jobs: Arc::new(Jobs::new(config.result_ttl)),
            config: Arc::new(config),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn queue(&self) -> &Arc<WorkQueue> {
        &self.queue
    }
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'a str,
    checkpoint_hash: &'a str,
    queue_depth: usize,
}

async fn health(State(st): State<AppState>) -> Response {
    Json(Health {
        status: "ok",
        checkpoint_hash: st.engine.checkpoint_hash(),
        queue_depth: st.queue.depth(),
    })
    .into_response()
}

async fn stylize(State(st): State<AppState>, form: Result<Multipart, MultipartRejection>) -> Result<Response, ApiError> {
    let form = form.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let params = request::parse(form).await?;
    let slot = st.queue.try_admit().map_err(|_| ApiError::queue_full())?;
    let mime = params.format.mime();
    let engine = st.engine.clone();
    if params.max_side() <= st.config.sync_max_side {
        let bytes = st
            .queue
            .run(slot, || {}, move || engine.render(&params))
            .await
            .ok_or_else(|| ApiError::internal("inference task failed"))??;
        return Ok(([(header::CONTENT_TYPE, mime)], bytes).into_response());
    }
    let job = st.jobs.create(mime);
    let (id, queue, jobs) = (job.id.clone(), st.queue.clone(), st.jobs.clone());
    tokio::spawn(async move {
        let started = {
            let (jobs, id) = (jobs.clone(), id.clone());
            move || jobs.running(&id)
        };
        let outcome = match queue.run(slot, started, move || engine.render(&params)).await {
            Some(Ok(bytes)) => Ok(bytes),
            Some(Err(e)) => Err(e.to_string()),
            None => Err("inference task failed".to_string()),
        };
        if let Err(e) = &outcome {
            warn!("job {id} failed: {e}");
        }
        jobs.finish(&id, outcome);
    });
    let location = format!("/v1/jobs/{}", job.id);
    Ok((StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(job)).into_response())
}

async fn job_status(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let status = st
        .jobs
        .get(&id)
        .ok_or_else(|| ApiError::not_found(format!("no job `{id}`")))?;
    Ok(Json(status).into_response())
}

async fn job_result(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    if st.jobs.get(&id).is_none() {
        return Err(ApiError::not_found(format!("no job `{id}`")));
    }
    let (bytes, mime) = st
        .jobs
        .result(&id)
        .ok_or_else(|| ApiError::not_found(format!("job `{id}` has no result")))?;
    Ok(([(header::CONTENT_TYPE, mime)], bytes.as_ref().clone()).into_response())
}

fn cors(origin: &str) -> Option<CorsLayer> {
    let allow = if origin == "*" {
        AllowOrigin::from(Any)
    } else {
        AllowOrigin::exact(HeaderValue::from_str(origin).ok()?)
    };
    Some(
        CorsLayer::new()
            .allow_origin(allow)
            .allow_methods([Method::GET, Method::POST])
            .allow_headers(Any),
    )
}

pub fn router(state: AppState) -> Router {
    let limit = state.config.max_body_bytes;
    let origin = state.config.allow_origin.clone();
    let mut app = Router::new()
        .route("/v1/health", get(health))
        .route("/v1/stylize", post(stylize))
        .route("/v1/jobs/{id}", get(job_status))
        .route("/v1/jobs/{id}/result", get(job_result))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state);
    if let Some(layer) = origin.as_deref().and_then(cors) {
        app = app.layer(layer);
    }
    app
}

/// Serves until the process ends.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    info!(
        "listening on http://{} (checkpoint {})",
        listener.local_addr()?,
        state.engine.checkpoint_hash()
    );
    axum::serve(listener, router(state)).await
}
