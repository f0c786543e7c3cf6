use axum::body::{Body, Bytes};
use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cotalk_core::chain::{
    intrinsic_report, round_timings, PayloadKind, PendingRead, RoundSubmission, SessionMode, SessionState, SessionStatus, TimingEvent,
};
use cotalk_core::gateway::{AudioFormat, PromptTemplate, TemplateId};
use cotalk_core::metrics::IntrinsicReport;
use cotalk_core::semantic::SemanticUnitTree;
use cotalk_core::store::{export_records, metrics_row, write_export_jsonl, write_metrics_csv};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::AppState;

/// Largest accepted audio upload.
pub const MAX_AUDIO_BYTES: usize = 32 * 1024 * 1024;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/prior", get(get_prior))
        .route("/sessions/{id}/rounds", post(submit_round))
        .route("/sessions/{id}/retry-merge", post(retry_merge))
        .route("/sessions/{id}/finalize", post(finalize))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/audio", post(upload_audio).layer(DefaultBodyLimit::max(MAX_AUDIO_BYTES)))
        .route("/guidelines", get(guidelines))
        .route("/export", get(export))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/healthz", get(healthz))
        .merge(api)
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

async fn require_token(State(state): State<AppState>, request: Request, next: Next) -> Response {
    if let Some(expected) = &state.inner.auth_token {
        let presented = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(request).await
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload.map(|Json(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

fn query<T>(q: Result<Query<T>, QueryRejection>) -> Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundView {
    pub round_index: u32,
    pub annotator_id: String,
    pub payload_kind: PayloadKind,
    pub raw_text: String,
    pub denoised_text: Option<String>,
    pub unit_count: usize,
    pub duplication_pct: Option<f64>,
    pub observe_s: f64,
    pub read_previous_s: f64,
    pub output_s: f64,
}

/// What clients see of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub image_ref: String,
    pub mode: SessionMode,
    pub status: SessionStatus,
    pub max_rounds: u32,
    pub next_round: u32,
    pub merged_caption: Option<String>,
    pub merged_unit_count: usize,
    pub merged_tree: SemanticUnitTree,
    pub rounds: Vec<RoundView>,
    pub pending_read: Option<PendingRead>,
    pub last_error: Option<String>,
    pub finalized_by: Option<String>,
}

impl From<&SessionState> for SessionView {
    fn from(s: &SessionState) -> Self {
        let timings = round_timings(&s.ledger, &s.session_id).unwrap_or_default();
        SessionView {
            session_id: s.session_id.clone(),
            image_ref: s.image_ref.clone(),
            mode: s.mode,
            status: s.status,
            max_rounds: s.max_rounds,
            next_round: s.next_round(),
            merged_caption: s.merged_caption.clone(),
            merged_unit_count: s.merged_tree.unit_count(),
            merged_tree: s.merged_tree.clone(),
            rounds: s
                .rounds
                .iter()
                .map(|r| {
                    let t = timings.get(&r.round_index).copied().unwrap_or(r.timings);
                    RoundView {
                        round_index: r.round_index,
                        annotator_id: r.annotator_id.clone(),
                        payload_kind: r.payload_kind,
                        raw_text: r.raw_text.clone(),
                        denoised_text: r.denoised_text.clone(),
                        unit_count: cotalk_core::semantic::build_tree(&r.extracted_units).unit_count(),
                        duplication_pct: r.duplication_pct,
                        observe_s: t.observe_s,
                        read_previous_s: t.read_previous_s,
                        output_s: t.output_s,
                    }
                })
                .collect(),
            pending_read: s.pending_read.clone(),
            last_error: s.last_error.clone(),
            finalized_by: s.finalized_by.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub image_ref: String,
    pub mode: SessionMode,
    /// Client-chosen id; a random one is assigned when absent.
    #[serde(default)]
    pub session_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub session: SessionView,
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 128 && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>), ApiError> {
    let req = body(payload)?;
    if req.image_ref.trim().is_empty() {
        return Err(ApiError::bad_request("image_ref must not be empty"));
    }
    let id = req.session_id.unwrap_or_else(|| uuid::Uuid::new_v4().to_string());
    if !valid_id(&id) {
        return Err(ApiError::bad_request("session_id may hold up to 128 letters, digits, '-', '_' or '.'"));
    }
    let (image_ref, mode, sid) = (req.image_ref, req.mode, id.clone());
    let session = state
        .create(id, move |engine, journal| engine.create_session(&sid, &image_ref, mode, journal))
        .await?;
    Ok((StatusCode::CREATED, Json(Created { session_id: session.session_id.clone(), session: SessionView::from(&session) })))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let slot = state.slot(&id).await?;
    let view = SessionView::from(&slot.lock().await.state);
    Ok(Json(view))
}

#[derive(Debug, Deserialize)]
pub struct PriorQuery {
    pub annotator_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriorView {
    pub round_index: u32,
    pub merged_caption: String,
    pub read_timer_token: String,
    /// Server time at which reading started, in Unix seconds.
    pub read_started_at: f64,
}

async fn get_prior(
    State(state): State<AppState>,
    Path(id): Path<String>,
    q: Result<Query<PriorQuery>, QueryRejection>,
) -> Result<Json<PriorView>, ApiError> {
    let annotator = query(q)?.annotator_id;
    let at = state.now();
    let (prior, session) = state
        .mutate(&id, move |engine, s, journal| Ok(engine.serve_prior_annotation(s, &annotator, at, journal)?))
        .await?;
    let read_started_at = session.pending_read.as_ref().map(|p| p.at).unwrap_or(at);
    Ok(Json(PriorView {
        round_index: prior.round_index,
        merged_caption: prior.merged_caption,
        read_timer_token: prior.read_timer_token,
        read_started_at,
    }))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmitRound {
    pub round_index: u32,
    pub annotator_id: String,
    #[serde(default)]
    pub payload_kind: Option<PayloadKind>,
    #[serde(default)]
    pub text: Option<String>,
    /// Key returned by `POST /audio`; the server transcribes it.
    #[serde(default)]
    pub audio_ref: Option<String>,
    #[serde(default)]
    pub audio_format: Option<String>,
    pub events: Vec<TimingEvent>,
}

async fn submit_round(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<SubmitRound>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let req = body(payload)?;
    state.slot(&id).await?;
    let (payload_kind, text) = match (req.text, req.audio_ref) {
        (Some(text), None) => (req.payload_kind.unwrap_or(PayloadKind::TypedText), text),
        (None, Some(key)) => {
            let format = req.audio_format.unwrap_or_else(|| "wav".into());
            let app = state.clone();
            let transcript = tokio::task::spawn_blocking(move || -> Result<String, ApiError> {
                let audio = app.store().get_blob(&key)?;
                Ok(app.engine().gateway().transcribe(&audio, &format)?)
            })
            .await
            .map_err(|e| ApiError::internal(e.to_string()))??;
            (PayloadKind::SpeechTranscript, transcript)
        }
        _ => return Err(ApiError::bad_request("send exactly one of text and audio_ref")),
    };
    let submission = RoundSubmission {
        round_index: req.round_index,
        annotator_id: req.annotator_id,
        payload_kind,
        text,
        events: req.events,
    };
    let ((), session) = state.mutate(&id, move |engine, s, journal| Ok(engine.submit_round(s, submission, journal)?)).await?;
    Ok(Json(SessionView::from(&session)))
}

async fn retry_merge(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let ((), session) = state.mutate(&id, |engine, s, journal| Ok(engine.retry_merge(s, journal)?)).await?;
    Ok(Json(SessionView::from(&session)))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Finalize {
    pub annotator_id: String,
}

async fn finalize(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<Finalize>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    let by = body(payload)?.annotator_id;
    let ((), session) = state.mutate(&id, move |engine, s, journal| Ok(engine.finalize(s, &by, journal)?)).await?;
    Ok(Json(SessionView::from(&session)))
}

async fn metrics(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<IntrinsicReport>, ApiError> {
    let slot = state.slot(&id).await?;
    let report = intrinsic_report(&slot.lock().await.state)?;
    Ok(Json(report))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Uploaded {
    pub audio_ref: String,
    pub bytes: usize,
    pub format: AudioFormat,
}

#[derive(Debug, Deserialize)]
pub struct AudioQuery {
    #[serde(default)]
    pub format: Option<String>,
}

async fn upload_audio(
    State(state): State<AppState>,
    q: Result<Query<AudioQuery>, QueryRejection>,
    bytes: Bytes,
) -> Result<(StatusCode, Json<Uploaded>), ApiError> {
    let format: AudioFormat = query(q)?.format.as_deref().unwrap_or("wav").parse()?;
    if bytes.is_empty() {
        return Err(ApiError::bad_request("audio upload is empty"));
    }
    let app = state.clone();
    let len = bytes.len();
    let key = tokio::task::spawn_blocking(move || app.store().put_blob(&bytes))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok((StatusCode::CREATED, Json(Uploaded { audio_ref: key, bytes: len, format })))
}

#[derive(Debug, Deserialize)]
pub struct GuidelineQuery {
    pub role: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Guideline {
    pub role: String,
    pub text: String,
}

async fn guidelines(q: Result<Query<GuidelineQuery>, QueryRejection>) -> Result<Json<Guideline>, ApiError> {
    let role = query(q)?.role;
    let id = match role.as_str() {
        "first" => TemplateId::GuideFirstPerson,
        "subsequent" => TemplateId::GuideSubsequent,
        other => return Err(ApiError::bad_request(format!("role must be first or subsequent, got {other:?}"))),
    };
    Ok(Json(Guideline { role, text: PromptTemplate::get(id).system.clone() }))
}

#[derive(Debug, Deserialize)]
pub struct ExportQuery {
    #[serde(default)]
    pub format: Option<String>,
    #[serde(default)]
    pub mode: Option<String>,
}

async fn export(State(state): State<AppState>, q: Result<Query<ExportQuery>, QueryRejection>) -> Result<Response, ApiError> {
    let q = query(q)?;
    if let Some(mode) = q.mode.as_deref() {
        if !["single", "parallel", "cotalk"].contains(&mode) {
            return Err(ApiError::bad_request(format!("mode must be single, parallel or cotalk, got {mode:?}")));
        }
    }
    let states = state.snapshot().await;
    let mut out = Vec::new();
    let content_type = match q.format.as_deref().unwrap_or("jsonl") {
        "jsonl" => {
            let records = export_records(states.iter(), q.mode.as_deref())?;
            write_export_jsonl(&records, &mut out)?;
            "application/x-ndjson"
        }
        "csv" => {
            let mut finalized: Vec<&SessionState> = states
                .iter()
                .filter(|s| s.is_finalized() && q.mode.as_deref().is_none_or(|m| m == s.mode.label()))
                .collect();
            finalized.sort_by(|a, b| a.session_id.cmp(&b.session_id));
            let rows = finalized.into_iter().map(|s| metrics_row(s, None)).collect::<Result<Vec<_>, _>>()?;
            write_metrics_csv(&rows, &mut out)?;
            "text/csv"
        }
        other => return Err(ApiError::bad_request(format!("format must be jsonl or csv, got {other:?}"))),
    };
    Ok(([(header::CONTENT_TYPE, content_type)], Body::from(out)).into_response())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub sessions: usize,
}

async fn healthz(State(state): State<AppState>) -> Json<Health> {
    Json(Health { status: "ok".into(), sessions: state.session_count().await })
}
