//! HTTP inference service: stylization with every runtime control behind
//! `/v1`, a bounded worker pool over one read-only model, and a job table
//! for inputs too large to answer synchronously.
//!
//! Routes:
//! - `POST /v1/stylize` multipart form, see [`request`]
//! - `GET /v1/jobs/{id}` job status
//! - `GET /v1/jobs/{id}/result` finished image
//! - `GET /v1/health`

mod api_error;
mod config;
mod engine;
mod jobs;
pub mod request;
mod routes;

pub use api_error::ApiError;
pub use config::ServiceConfig;
pub use engine::Engine;
pub use jobs::{JobState, JobStatus, QueueFull, QueueSlot, WorkQueue};
pub use routes::{router, serve, AppState};
