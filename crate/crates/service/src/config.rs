use std::time::Duration;

/// Runtime limits of the service.
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Inference tasks running at once.
    pub workers: usize,
    /// Admitted tasks (waiting or running) before new ones get 503.
    pub max_queue: usize,
    /// Request body limit in bytes.
    pub max_body_bytes: usize,
    /// Content images whose longer side is at most this are answered
    /// synchronously; larger ones become jobs.
    pub sync_max_side: usize,
    /// How long finished jobs and their results are kept.
    pub result_ttl: Duration,
    /// Origin allowed by CORS, `*` for any. None disables CORS headers.
    pub allow_origin: Option<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workers: 2,
            max_queue: 16,
            max_body_bytes: 16 * 1024 * 1024,
            sync_max_side: 512,
            result_ttl: Duration::from_secs(600),
            allow_origin: None,
        }
    }
}
