use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use cotalk_core::chain::{ChainConfig, ChainEngine, ChainError, SessionEvent, SessionState};
use cotalk_core::dedup::{DuplicationMatcher, HttpEmbedding};
use cotalk_core::gateway::{AuditLog, Gateway, HttpChatBackend, HttpSpeech, MockBackend, MockSpeech, ModelBackend, SpeechBackend};
use cotalk_core::store::{FileStore, StoreError, StoreOptions, TrackedSession};
use tokio::sync::{Mutex, RwLock};

use crate::config::{ApiConfig, BackendKind, MatcherKind};
use crate::error::ApiError;

/// Seconds since the Unix epoch; the server's side of the timing ledger.
pub type Clock = Arc<dyn Fn() -> f64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0))
}

pub(crate) type SessionSlot = Arc<Mutex<TrackedSession>>;

pub(crate) struct Inner {
    pub engine: ChainEngine,
    pub store: FileStore,
    pub sessions: RwLock<BTreeMap<String, SessionSlot>>,
    pub auth_token: Option<String>,
    pub clock: Clock,
}

/// Shared handle passed to every request handler.
#[derive(Clone)]
pub struct AppState {
    pub(crate) inner: Arc<Inner>,
}

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("environment variable {0} must be set for the configured backend")]
    MissingEnv(String),
    #[error("cannot open audit log {path}: {source}")]
    AuditLog { path: std::path::PathBuf, source: std::io::Error },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid matcher settings: {0}")]
    Matcher(String),
}

fn required_env(name: &str) -> Result<String, StartupError> {
    std::env::var(name).map_err(|_| StartupError::MissingEnv(name.to_string()))
}

/// Gateway and matcher as configured. Builds blocking HTTP clients, so call it
/// outside an async runtime.
pub fn build_engine(config: &ApiConfig) -> Result<ChainEngine, StartupError> {
    let g = &config.gateway;
    let backend: Arc<dyn ModelBackend> = match g.backend {
        BackendKind::Mock => Arc::new(MockBackend),
        BackendKind::Http => Arc::new(HttpChatBackend::new(
            required_env(&g.endpoint_env)?,
            std::env::var(&g.model_env).unwrap_or_else(|_| "gpt-4o".into()),
            std::env::var(&g.key_env).ok(),
        )),
    };
    let speech: Arc<dyn SpeechBackend> = match g.speech {
        BackendKind::Mock => Arc::new(MockSpeech),
        BackendKind::Http => Arc::new(HttpSpeech::new(
            required_env(&g.speech_endpoint_env)?,
            std::env::var(&g.speech_model_env).unwrap_or_else(|_| "whisper-1".into()),
            std::env::var(&g.speech_key_env).ok(),
        )),
    };
    let mut gateway = Gateway::new(backend, speech);
    if let Some(path) = &g.audit_log {
        let audit = AuditLog::open(path).map_err(|source| StartupError::AuditLog { path: path.clone(), source })?;
        gateway = gateway.with_audit(audit);
    }
    let m = &config.matcher;
    let matcher = match m.mode {
        MatcherKind::Exact => DuplicationMatcher::exact(),
        MatcherKind::Embedding => {
            let provider = HttpEmbedding::new(
                required_env(&m.endpoint_env)?,
                std::env::var(&m.model_env).unwrap_or_else(|_| "all-MiniLM-L6-v2".into()),
                std::env::var(&m.key_env).ok(),
            );
            DuplicationMatcher::embedding(Arc::new(provider))
                .with_threshold(m.threshold)
                .map_err(|e| StartupError::Matcher(e.to_string()))?
        }
    };
    let chain = ChainConfig { default_max_rounds: config.cotalk_max_rounds };
    Ok(ChainEngine::new(Arc::new(gateway), matcher, chain))
}

impl AppState {
    /// Opens the store in the configured data directory and replays it.
    pub fn open(config: &ApiConfig, engine: ChainEngine, clock: Clock) -> Result<AppState, StartupError> {
        let options = StoreOptions { snapshot_every: config.snapshot_every, repair_torn_tail: true, sync: config.fsync };
        let (store, sessions) = FileStore::open(&config.data_dir, options)?;
        tracing::info!(sessions = sessions.len(), dir = %config.data_dir.display(), "store opened");
        let sessions = sessions.into_iter().map(|(id, s)| (id, Arc::new(Mutex::new(s)))).collect();
        Ok(AppState {
            inner: Arc::new(Inner {
                engine,
                store,
                sessions: RwLock::new(sessions),
                auth_token: config.auth_token(),
                clock,
            }),
        })
    }

    /// Requires `Authorization: Bearer <token>` on every route but `/healthz`.
    pub fn with_auth_token(mut self, token: Option<String>) -> AppState {
        let inner = Arc::get_mut(&mut self.inner).expect("set the token before sharing the state");
        inner.auth_token = token;
        self
    }

    pub fn engine(&self) -> &ChainEngine {
        &self.inner.engine
    }

    pub fn store(&self) -> &FileStore {
        &self.inner.store
    }

    pub(crate) fn now(&self) -> f64 {
        (self.inner.clock)()
    }

    pub(crate) async fn slot(&self, id: &str) -> Result<SessionSlot, ApiError> {
        self.inner
            .sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found("session", id))
    }

    pub(crate) async fn session_count(&self) -> usize {
        self.inner.sessions.read().await.len()
    }

    /// Clones of every session, each taken under its own lock.
    pub(crate) async fn snapshot(&self) -> Vec<SessionState> {
        let slots: Vec<SessionSlot> = self.inner.sessions.read().await.values().cloned().collect();
        let mut states = Vec::with_capacity(slots.len());
        for slot in slots {
            states.push(slot.lock().await.state.clone());
        }
        states
    }

    /// Creates and persists a session under a fresh id.
    pub(crate) async fn create(
        &self,
        id: String,
        op: impl FnOnce(&ChainEngine, &mut Vec<SessionEvent>) -> Result<SessionState, ChainError> + Send + 'static,
    ) -> Result<SessionState, ApiError> {
        let mut sessions = self.inner.sessions.write().await;
        if sessions.contains_key(&id) {
            return Err(ApiError::new(axum::http::StatusCode::CONFLICT, "session_exists", format!("session {id:?} already exists")));
        }
        let inner = self.inner.clone();
        let tracked = tokio::task::spawn_blocking(move || -> Result<TrackedSession, ApiError> {
            let mut journal = Vec::new();
            let state = op(&inner.engine, &mut journal)?;
            let tracked = TrackedSession { state, events: journal.len() as u64 };
            inner.store.record(&tracked, &journal)?;
            Ok(tracked)
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
        let state = tracked.state.clone();
        sessions.insert(id, Arc::new(Mutex::new(tracked)));
        Ok(state)
    }

    /// Runs `op` on a copy of the session under its lock, persists the events
    /// it produced, then commits the copy. Events are kept even when `op`
    /// fails after producing them.
    pub(crate) async fn mutate<T: Send + 'static>(
        &self,
        id: &str,
        op: impl FnOnce(&ChainEngine, &mut SessionState, &mut Vec<SessionEvent>) -> Result<T, ApiError> + Send + 'static,
    ) -> Result<(T, SessionState), ApiError> {
        let slot = self.slot(id).await?;
        let mut guard = slot.lock_owned().await;
        let inner = self.inner.clone();
        tokio::task::spawn_blocking(move || {
            let mut next = guard.clone();
            let mut journal = Vec::new();
            let result = op(&inner.engine, &mut next.state, &mut journal);
            if !journal.is_empty() {
                next.events += journal.len() as u64;
                inner.store.record(&next, &journal)?;
                *guard = next;
            }
            result.map(|value| (value, guard.state.clone()))
        })
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
    }
}
