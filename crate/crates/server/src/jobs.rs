use sketchfill::guidance::GuidanceProvider;
use sketchfill::objective::{LossBreakdown, PerceptualBackend};
use sketchfill::optimizer::OptimizerConfig;
use sketchfill::pipeline::{complete, Hooks, PipelineContext, SessionState, SessionStatus, SessionStore, INTERRUPTED};
use sketchfill::vlm::VlmClient;
use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

/// Everything a completion job needs besides the session itself.
pub struct Engine {
    pub vlm: VlmClient,
    pub guidance: Box<dyn GuidanceProvider>,
    pub backend: Box<dyn PerceptualBackend>,
    pub config: OptimizerConfig,
    pub max_adjust_iters: usize,
}

pub(crate) struct Job {
    pub cancel: AtomicBool,
    pub iteration: AtomicUsize,
    pub finished: AtomicBool,
}

pub struct AppState {
    pub engine: Engine,
    pub store: SessionStore,
    pub static_dir: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionState>>>>,
    jobs: Mutex<HashMap<String, Arc<Job>>>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    /// Loads stored sessions; any left running by a previous process is
    /// marked `Failed("interrupted")`.
    pub fn new(engine: Engine, store: SessionStore, static_dir: Option<PathBuf>) -> Self {
        let mut sessions = HashMap::new();
        for id in store.list().unwrap_or_default() {
            match store.load(&id) {
                Ok(mut s) => {
                    if s.status.is_running() {
                        s.status = SessionStatus::Failed(INTERRUPTED.into());
                        if let Err(e) = store.save(&s) {
                            tracing::warn!("could not checkpoint session {id}: {e}");
                        }
                    }
                    sessions.insert(id, Arc::new(Mutex::new(s)));
                }
                Err(e) => tracing::warn!("skipping stored session {id}: {e}"),
            }
        }
        Self {
            engine,
            store,
            static_dir,
            sessions: Mutex::new(sessions),
            jobs: Mutex::new(HashMap::new()),
        }
    }

    pub fn insert(&self, session: SessionState) {
        self.persist(&session);
        lock(&self.sessions).insert(session.id.clone(), Arc::new(Mutex::new(session)));
    }

    pub fn snapshot(&self, id: &str) -> Option<SessionState> {
        let entry = lock(&self.sessions).get(id).cloned()?;
        let s = lock(&entry).clone();
        Some(s)
    }

    pub fn progress(&self, id: &str) -> Option<usize> {
        lock(&self.jobs).get(id).map(|j| j.iteration.load(Ordering::Relaxed))
    }

    fn persist(&self, session: &SessionState) {
        if let Err(e) = self.store.save(session) {
            tracing::warn!("could not save session {}: {e}", session.id);
        }
    }

    fn publish(&self, session: &SessionState) {
        self.persist(session);
        if let Some(entry) = lock(&self.sessions).get(&session.id).cloned() {
            *lock(&entry) = session.clone();
        }
    }

    /// Registers a completion job. `Err` carries the current status when the
    /// session cannot start.
    pub(crate) fn claim(&self, id: &str) -> Result<Option<(SessionState, Arc<Job>)>, SessionStatus> {
        let Some(entry) = lock(&self.sessions).get(id).cloned() else {
            return Ok(None);
        };
        let session = lock(&entry);
        let mut jobs = lock(&self.jobs);
        if session.status != SessionStatus::Created || jobs.contains_key(id) {
            return Err(session.status.clone());
        }
        let job = Arc::new(Job {
            cancel: AtomicBool::new(false),
            iteration: AtomicUsize::new(0),
            finished: AtomicBool::new(false),
        });
        jobs.insert(id.to_string(), job.clone());
        Ok(Some((session.clone(), job)))
    }

    /// Blocking; runs on a worker thread.
    pub(crate) fn run_job(&self, mut session: SessionState, job: Arc<Job>) {
        let id = session.id.clone();
        let e = &self.engine;
        let mut ctx = PipelineContext::new(&e.vlm, e.guidance.as_ref(), e.backend.as_ref());
        ctx.max_adjust_iters = e.max_adjust_iters;
        let publish = |s: &SessionState| self.publish(s);
        let progress = |i: usize, _: &LossBreakdown| job.iteration.store(i + 1, Ordering::Relaxed);
        let hooks = Hooks {
            cancel: Some(&job.cancel),
            progress: Some(&progress),
            on_transition: Some(&publish),
        };
        if let Err(err) = complete(&mut session, &ctx, &hooks) {
            tracing::warn!("job {id}: {err}");
        }
        self.publish(&session);
        tracing::info!("job {id} finished: {}", session.status);
        job.finished.store(true, Ordering::SeqCst);
        lock(&self.jobs).remove(&id);
    }

    /// Cancels every job, waits up to `grace`, then checkpoints whatever is
    /// still running as interrupted.
    pub async fn interrupt_all(&self, grace: Duration) {
        let jobs: Vec<(String, Arc<Job>)> = lock(&self.jobs).iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        for (_, j) in &jobs {
            j.cancel.store(true, Ordering::SeqCst);
        }
        let deadline = Instant::now() + grace;
        while Instant::now() < deadline && jobs.iter().any(|(_, j)| !j.finished.load(Ordering::SeqCst)) {
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        for (id, j) in jobs {
            if j.finished.load(Ordering::SeqCst) {
                continue;
            }
            if let Some(mut s) = self.snapshot(&id) {
                if s.status.is_running() || s.status == SessionStatus::Created {
                    s.status = SessionStatus::Failed(INTERRUPTED.into());
                    self.publish(&s);
                }
            }
        }
    }
}
