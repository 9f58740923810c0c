//! HTTP front end for labeling sessions.
//!
//! Each session journals to `<sessions_dir>/<id>.jsonl`. Requests against
//! one session are serialized by a per-session lock; different sessions
//! proceed independently. Journals found in the directory at startup are
//! replayed and served again.

mod error;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use bridget_core::{ClientEvent, EngineConfig, Error, Session, SessionConfig};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::Mutex;

pub use error::ApiError;

/// Contents of the `--config` file given to `serve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_sessions_dir")]
    pub sessions_dir: PathBuf,
    /// Engine settings for sessions created without their own.
    #[serde(default)]
    pub engine: EngineConfig,
}

fn default_sessions_dir() -> PathBuf {
    PathBuf::from("sessions")
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig { sessions_dir: default_sessions_dir(), engine: EngineConfig::default() }
    }
}

impl ServiceConfig {
    pub fn load(path: &Path) -> bridget_core::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ServiceConfig = serde_json::from_str(&text)?;
        cfg.engine.validate()?;
        Ok(cfg)
    }
}

type Shared = Arc<Mutex<Session>>;

#[derive(Debug, Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Shared>>,
}

impl AppState {
    /// Creates the sessions directory if needed and resumes every journal in it.
    /// Journals that fail to replay are reported and skipped.
    pub fn open(config: ServiceConfig) -> bridget_core::Result<Self> {
        std::fs::create_dir_all(&config.sessions_dir)?;
        let mut sessions = HashMap::new();
        let mut paths: Vec<PathBuf> = std::fs::read_dir(&config.sessions_dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            match Session::resume_file(&path) {
                Ok(s) => {
                    sessions.insert(s.id().to_string(), Arc::new(Mutex::new(s)));
                }
                Err(e) => eprintln!("skipping {}: {e}", path.display()),
            }
        }
        Ok(AppState { inner: Arc::new(Inner { config, sessions: RwLock::new(sessions) }) })
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> Result<Shared, ApiError> {
        self.inner.sessions.read().unwrap().get(id).cloned().ok_or_else(|| ApiError::session_not_found(id))
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/events", post(post_event))
        .route("/sessions/{id}/prompt", get(get_prompt))
        .route("/sessions/{id}/metrics", get(get_metrics))
        .route("/sessions/{id}/log", get(get_log))
        .route("/sessions/{id}/explanation", get(get_explanation))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn create_session(
    State(state): State<AppState>,
    body: Result<Json<Value>, JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(mut body) = body?;
    if let Value::Object(map) = &mut body {
        if !map.contains_key("engine") {
            map.insert("engine".into(), serde_json::to_value(&state.inner.config.engine).map_err(Error::from)?);
        }
    }
    let config: SessionConfig = serde_json::from_value(body).map_err(Error::from)?;
    let id = uuid::Uuid::new_v4().simple().to_string();
    let path = state.inner.config.sessions_dir.join(format!("{id}.jsonl"));
    let session = Session::create_with_file(id.clone(), config, &path)?;
    let body = json!({
        "session_id": id,
        "state_hash": session.state_hash(),
        "metrics": session.metrics(),
    });
    state.inner.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
    Ok((StatusCode::CREATED, Json(body)))
}

async fn post_event(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<ClientEvent>, JsonRejection>,
) -> Result<Json<Value>, ApiError> {
    let session = state.get(&id)?;
    let Json(event) = body?;
    let mut session = session.lock().await;
    let outcome = session.handle(event)?;
    Ok(Json(json!({
        "outcome": outcome,
        "prompt": session.prompt(),
        "metrics": session.metrics(),
    })))
}

async fn get_prompt(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let session = state.get(&id)?;
    let session = session.lock().await;
    Ok(Json(json!({ "prompt": session.prompt() })))
}

async fn get_metrics(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    let session = state.get(&id)?;
    let session = session.lock().await;
    Ok(Json(serde_json::to_value(session.metrics()).map_err(Error::from)?))
}

async fn get_log(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ApiError> {
    let session = state.get(&id)?;
    let text = session.lock().await.journal_jsonl();
    Ok(([(header::CONTENT_TYPE, "application/x-ndjson")], text))
}

/// Read-only preview; the journaled route is a `request_explanation` event.
async fn get_explanation(
    State(state): State<AppState>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Value>, ApiError> {
    let session = state.get(&id)?;
    let session = session.lock().await;
    let explanations = session.engine().preview_explanation()?;
    Ok(Json(json!({ "explanations": explanations })))
}
