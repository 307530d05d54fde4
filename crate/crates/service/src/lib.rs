//! Live preferential-BO sessions over HTTP/JSON.
//!
//! | method | path | body | response |
//! |---|---|---|---|
//! | POST | `/sessions` | [`CreateSession`] | [`DuelResponse`] |
//! | GET | `/sessions/{id}` | | [`SessionState`] |
//! | POST | `/sessions/{id}/outcome` | [`Outcome`] | [`DuelResponse`] |
//! | GET | `/sessions/{id}/duel` | | [`DuelResponse`] |
//!
//! Errors are [`api::ErrorBody`] with 400 (invalid request), 404 (unknown
//! session) or 409 (not awaiting feedback, or a stale `duel_id`).

pub mod api;
pub mod error;
pub mod journal;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::cors::CorsLayer;

pub use api::{CreateSession, DuelResponse, Outcome, SessionState, SCHEMA_VERSION};
pub use error::ServiceError;
pub use session::{ServiceConfig, Session};

use journal::{Entry, Journal};
use session::Step;

type SessionHandle = Arc<Mutex<Session>>;

pub struct AppState {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, SessionHandle>>,
    created: AtomicU64,
    journal: Option<Journal>,
}

fn lock(session: &SessionHandle) -> MutexGuard<'_, Session> {
    session.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl AppState {
    /// Opens the log directory, if any, and replays every session in it.
    pub fn new(cfg: ServiceConfig) -> Result<Arc<Self>, ServiceError> {
        let journal = cfg.log_dir.as_ref().map(Journal::open).transpose()?;
        let mut sessions = HashMap::new();
        if let Some(j) = &journal {
            for (id, entries) in j.load()? {
                let mut entries = entries.into_iter();
                let Some(Entry::Created { seed, spec, .. }) = entries.next() else {
                    continue;
                };
                let mut s = Session::create(id.clone(), spec, seed, &cfg)?;
                for e in entries {
                    if let Entry::Outcome { duel_id, winner } = e {
                        s.submit_blocking(winner, Some(duel_id), &cfg.bo)?;
                    }
                }
                sessions.insert(id, Arc::new(Mutex::new(s)));
            }
        }
        Ok(Arc::new(Self {
            created: AtomicU64::new(sessions.len() as u64),
            sessions: RwLock::new(sessions),
            cfg,
            journal,
        }))
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ServiceError> {
        self.sessions
            .read()
            .unwrap_or_else(|p| p.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_owned()))
    }

    fn log(&self, id: &str, entry: &Entry) -> Result<(), ServiceError> {
        match &self.journal {
            Some(j) => Ok(j.append(id, entry)?),
            None => Ok(()),
        }
    }

    pub fn create(&self, spec: CreateSession) -> Result<DuelResponse, ServiceError> {
        let n = self.created.fetch_add(1, Ordering::SeqCst);
        let seed = spec.seed.unwrap_or(self.cfg.server_seed.wrapping_add(n));
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::create(id.clone(), spec, seed, &self.cfg)?;
        self.log(
            &id,
            &Entry::Created {
                schema_version: SCHEMA_VERSION,
                seed,
                spec: session.spec().clone(),
            },
        )?;
        let response = session.duel_response();
        self.sessions
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .insert(id, Arc::new(Mutex::new(session)));
        Ok(response)
    }

    pub async fn submit(&self, id: &str, outcome: Outcome) -> Result<DuelResponse, ServiceError> {
        let handle = self.session(id)?;
        let job = {
            let mut s = lock(&handle);
            let step = s.begin_outcome(outcome.winner, outcome.duel_id)?;
            let duel_id = s.answered() - 1;
            self.log(
                id,
                &Entry::Outcome {
                    duel_id,
                    winner: outcome.winner,
                },
            )?;
            match step {
                Step::Ready => return Ok(s.duel_response()),
                Step::Compute(job) => job,
            }
        };
        let bo = self.cfg.bo.clone();
        let result = tokio::task::spawn_blocking(move || job.run(&bo)).await;
        let mut s = lock(&handle);
        match result {
            Ok(r) => s.finish(r),
            Err(_) => s.abort_compute(),
        }
        Ok(s.duel_response())
    }

    pub fn duel(&self, id: &str) -> Result<DuelResponse, ServiceError> {
        Ok(lock(&self.session(id)?).duel_response())
    }

    pub async fn state(self: &Arc<Self>, id: &str) -> Result<SessionState, ServiceError> {
        let handle = self.session(id)?;
        let job = lock(&handle).grid_job();
        if let Some(job) = job {
            let app = Arc::clone(self);
            let (job, grid) = tokio::task::spawn_blocking(move || {
                let grid = job.run(&app.cfg);
                (job, grid)
            })
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))?;
            let grid = grid.map_err(|e| ServiceError::Internal(e.to_string()))?;
            lock(&handle).store_grid(&job, grid);
        }
        let state = lock(&handle).state();
        Ok(state)
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn create_session(
    State(app): State<Arc<AppState>>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<DuelResponse>), ServiceError> {
    let spec = body(payload)?;
    Ok((StatusCode::CREATED, Json(app.create(spec)?)))
}

async fn get_session(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<SessionState>, ServiceError> {
    Ok(Json(app.state(&id).await?))
}

async fn submit_outcome(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    payload: Result<Json<Outcome>, JsonRejection>,
) -> Result<Json<DuelResponse>, ServiceError> {
    let outcome = body(payload)?;
    Ok(Json(app.submit(&id, outcome).await?))
}

async fn get_duel(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> Result<Json<DuelResponse>, ServiceError> {
    Ok(Json(app.duel(&id)?))
}

/// The API with permissive CORS so a browser UI on another origin can call it.
pub fn router(app: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/outcome", post(submit_outcome))
        .route("/sessions/{id}/duel", get(get_duel))
        .layer(CorsLayer::permissive())
        .with_state(app)
}

pub async fn serve(addr: SocketAddr, cfg: ServiceConfig) -> Result<(), ServiceError> {
    let app = AppState::new(cfg)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(app)).await?;
    Ok(())
}
