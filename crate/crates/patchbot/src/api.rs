//! The JSON service behind the review UI.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, RwLock};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{info, warn};
use patchbot_core::bundle::Bundle;
use patchbot_core::ingest::{parse_timestamp, to_iso, MonitorWindow};
use serde_json::json;

use crate::config::Config;
use crate::error::AppError;
use crate::jobs::{JobError, JobKind, JobRecord, JobState, Jobs};
use crate::ops::{self, FeedbackInput};

pub type Clock = Arc<dyn Fn() -> i64 + Send + Sync>;

pub fn system_clock() -> Clock {
    Arc::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs() as i64)
    })
}

pub struct AppState {
    pub config: Config,
    bundle: RwLock<Option<Arc<Bundle>>>,
    clock: Clock,
    writer: Mutex<()>,
    jobs: Jobs,
}

impl AppState {
    /// Opens the store and loads the deployed bundle if there is one.
    pub fn new(config: Config, clock: Clock) -> Result<Self, AppError> {
        let store = ops::open_store(&config)?;
        let bundle = match ops::load_bundle(&config.bundle_dir) {
            Ok(b) => Some(Arc::new(b)),
            Err(e) if e.code == "model_unavailable" => {
                warn!("{e}; ingest jobs will store patches without scoring them");
                None
            }
            Err(e) => return Err(e),
        };
        Ok(AppState {
            jobs: Jobs::new(&store),
            config,
            bundle: RwLock::new(bundle),
            clock,
            writer: Mutex::new(()),
        })
    }

    pub fn bundle(&self) -> Option<Arc<Bundle>> {
        self.bundle.read().expect("bundle lock").clone()
    }

    fn now_iso(&self) -> String {
        to_iso((self.clock)())
    }
}

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(json!({ "error": self }))).into_response()
    }
}

type ApiResult<T> = Result<T, AppError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/recommendations", get(recommendations))
        .route("/api/patches/{sha}", get(patch_detail))
        .route("/api/patches/{sha}/feedback", post(feedback))
        .route("/api/stats", get(stats))
        .route("/api/ingest/run", post(ingest_run))
        .route("/api/retrain", post(retrain))
        .route("/api/jobs/{id}", get(job))
        .fallback(no_route)
        .with_state(state)
}

async fn no_route(uri: Uri) -> AppError {
    AppError::not_found("not_found", format!("no endpoint at {}", uri.path()))
}

fn window_param(q: &HashMap<String, String>, period_days: u32) -> ApiResult<Option<MonitorWindow>> {
    let ts = |key: &str| -> ApiResult<Option<i64>> {
        match q.get(key).map(|s| s.trim()).filter(|s| !s.is_empty()) {
            None => Ok(None),
            Some(s) => parse_timestamp(s).map(Some).ok_or_else(|| {
                AppError::bad_request("invalid_window", format!("cannot parse {key}=`{s}`"))
            }),
        }
    };
    ops::window_from(ts("since")?, ts("until")?, period_days)
}

async fn recommendations(
    State(st): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Vec<ops::RecommendationView>>> {
    let window = window_param(&q, st.config.period_days)?;
    Ok(Json(ops::recommendations(&st.config, window.as_ref())?))
}

async fn patch_detail(
    State(st): State<Arc<AppState>>,
    Path(sha): Path<String>,
) -> ApiResult<Json<ops::PatchDetail>> {
    Ok(Json(ops::patch_detail(&st.config, &sha)?))
}

async fn feedback(
    State(st): State<Arc<AppState>>,
    Path(sha): Path<String>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<ops::FeedbackAck>)> {
    let input: FeedbackInput = serde_json::from_slice(&body)
        .map_err(|e| AppError::bad_request("invalid_record", e.to_string()))?;
    let _writer = st.writer.lock().expect("writer lock");
    let ack = ops::add_feedback(&st.config, &sha, input, (st.clock)())?;
    Ok((StatusCode::CREATED, Json(ack)))
}

async fn stats(
    State(st): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<patchbot_core::pipeline::Funnel>> {
    let window = window_param(&q, st.config.period_days)?;
    Ok(Json(ops::stats(&st.config, window.as_ref())?))
}

async fn job(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<JobRecord>> {
    Ok(Json(st.jobs.get(&id)?))
}

/// Runs `work` on the blocking pool and records its outcome on `job`.
fn spawn_job<F>(st: Arc<AppState>, mut job: JobRecord, work: F)
where
    F: FnOnce(&AppState) -> Result<serde_json::Value, AppError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || {
        job.state = JobState::Running;
        if let Err(e) = st.jobs.save(&job) {
            warn!("job {}: {e}", job.id);
        }
        let outcome = work(&st);
        job.finished_at = Some(st.now_iso());
        match outcome {
            Ok(v) => {
                job.state = JobState::Succeeded;
                job.result = Some(v);
            }
            Err(e) => {
                warn!("job {} failed: {e}", job.id);
                job.state = JobState::Failed;
                job.error = Some(JobError::from(&e));
            }
        }
        if let Err(e) = st.jobs.save(&job) {
            warn!("job {}: {e}", job.id);
        }
        info!("job {} finished: {:?}", job.id, job.state);
    });
}

async fn ingest_run(
    State(st): State<Arc<AppState>>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let window = window_param(&q, st.config.period_days)?;
    let job = st.jobs.create(JobKind::Ingest, st.now_iso())?;
    spawn_job(st.clone(), job.clone(), move |st| {
        let summary = ops::ingest(&st.config, window, (st.clock)())?;
        let since = parse_timestamp(&summary.since).unwrap_or(i64::MIN);
        let until = parse_timestamp(&summary.until).unwrap_or(i64::MAX);
        let analysis = match st.bundle() {
            Some(b) => {
                let w = MonitorWindow::new(since, until, st.config.period_days)?;
                Some(ops::analyze(&st.config, &b, Some(&w))?)
            }
            None => None,
        };
        Ok(json!({ "ingest": summary, "analysis": analysis }))
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

async fn retrain(State(st): State<Arc<AppState>>) -> ApiResult<(StatusCode, Json<JobRecord>)> {
    let lock = ops::lock_training(&st.config)?;
    let job = st.jobs.create(JobKind::Retrain, st.now_iso())?;
    spawn_job(st.clone(), job.clone(), move |st| {
        let _lock = lock;
        let summary = ops::retrain_locked(&st.config, &st.config.bundle_dir)?;
        let fresh = ops::load_bundle(&st.config.bundle_dir)?;
        *st.bundle.write().expect("bundle lock") = Some(Arc::new(fresh));
        Ok(serde_json::to_value(summary)?)
    });
    Ok((StatusCode::ACCEPTED, Json(job)))
}

/// Serves until the process is stopped.
pub fn serve(config: Config) -> Result<(), AppError> {
    let port = config.http_port;
    let state = Arc::new(AppState::new(config, system_clock())?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        let listener = tokio::net::TcpListener::bind(addr).await?;
        info!("listening on {addr}");
        axum::serve(listener, router(state)).await?;
        Ok(())
    })
}
