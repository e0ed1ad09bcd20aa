use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::Serialize;
use tokio::sync::Semaphore;

/// Bounded admission plus a fixed number of concurrent workers.
pub struct WorkQueue {
    depth: AtomicUsize,
    max: usize,
    workers: Arc<Semaphore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueFull;

/// One admitted task; releases its place in the queue when dropped.
pub struct QueueSlot {
    queue: Arc<WorkQueue>,
}

impl Drop for QueueSlot {
    fn drop(&mut self) {
        self.queue.depth.fetch_sub(1, Ordering::SeqCst);
    }
}

impl WorkQueue {
    pub fn new(workers: usize, max: usize) -> Arc<Self> {
        Arc::new(WorkQueue {
            depth: AtomicUsize::new(0),
            max,
            workers: Arc::new(Semaphore::new(workers.max(1))),
        })
    }

    /// Tasks admitted and not yet finished.
    pub fn depth(&self) -> usize {
        self.depth.load(Ordering::SeqCst)
    }

    pub fn try_admit(self: &Arc<Self>) -> Result<QueueSlot, QueueFull> {
        self.depth
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |d| (d < self.max).then_some(d + 1))
            .map(|_| QueueSlot { queue: self.clone() })
            .map_err(|_| QueueFull)
    }

    /// Waits for a worker, then runs `f` on the blocking pool. `started`
    /// fires once a worker has been obtained. The slot and the worker stay
    /// taken until `f` returns, even if the caller stops waiting.
    pub async fn run<T: Send + 'static>(
        &self,
        slot: QueueSlot,
        started: impl FnOnce(),
        f: impl FnOnce() -> T + Send + 'static,
    ) -> Option<T> {
        let permit = self.workers.clone().acquire_owned().await.ok()?;
        started();
        tokio::task::spawn_blocking(move || {
            let out = f();
            drop((permit, slot));
            out
        })
        .await
        .ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    fn rank(self) -> u8 {
        match self {
            JobState::Queued => 0,
            JobState::Running => 1,
            JobState::Done | JobState::Failed => 2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct JobStatus {
    pub id: String,
    pub state: JobState,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result_url: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Job {
    status: JobStatus,
    result: Option<Arc<Vec<u8>>>,
    mime: &'static str,
    finished: Option<Instant>,
}

/// Job table; each job is written only by the task that runs it.
pub(crate) struct Jobs {
    table: Mutex<HashMap<String, Job>>,
    ttl: Duration,
}

impl Jobs {
    pub fn new(ttl: Duration) -> Self {
        Jobs {
            table: Mutex::new(HashMap::new()),
            ttl,
        }
    }

    fn purge(&self, table: &mut HashMap<String, Job>) {
        let ttl = self.ttl;
        table.retain(|_, j| j.finished.is_none_or(|t| t.elapsed() < ttl));
    }

    pub fn create(&self, mime: &'static str) -> JobStatus {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let status = JobStatus {
            id: id.clone(),
            state: JobState::Queued,
            result_url: None,
            error: None,
        };
        let mut t = self.table.lock().expect("job table lock");
        self.purge(&mut t);
        t.insert(
            id,
            Job {
                status: status.clone(),
                result: None,
                mime,
                finished: None,
            },
        );
        status
    }

    pub fn get(&self, id: &str) -> Option<JobStatus> {
        let mut t = self.table.lock().expect("job table lock");
        self.purge(&mut t);
        t.get(id).map(|j| j.status.clone())
    }

    pub fn result(&self, id: &str) -> Option<(Arc<Vec<u8>>, &'static str)> {
        let t = self.table.lock().expect("job table lock");
        t.get(id).and_then(|j| j.result.clone().map(|r| (r, j.mime)))
    }

    /// Moves a job forward; backward transitions are ignored.
    fn advance(&self, id: &str, state: JobState, f: impl FnOnce(&mut Job)) {
        let mut t = self.table.lock().expect("job table lock");
        if let Some(j) = t.get_mut(id) {
            if state.rank() > j.status.state.rank() {
                j.status.state = state;
                f(j);
            }
        }
    }

    pub fn running(&self, id: &str) {
        self.advance(id, JobState::Running, |_| {});
    }

    pub fn finish(&self, id: &str, outcome: Result<Vec<u8>, String>) {
        let state = if outcome.is_ok() { JobState::Done } else { JobState::Failed };
        self.advance(id, state, |j| {
            j.finished = Some(Instant::now());
            match outcome {
                Ok(bytes) => {
                    j.result = Some(Arc::new(bytes));
                    j.status.result_url = Some(format!("/v1/jobs/{id}/result"));
                }
                Err(e) => j.status.error = Some(e),
            }
        });
    }
}
