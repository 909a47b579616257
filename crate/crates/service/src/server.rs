//! JSON API over the store and pipeline, plus static files for the review UI.
//!
//! | method | path                                  |                                  |
//! |--------|---------------------------------------|----------------------------------|
//! | POST   | /api/scans                            | multipart or raw PNG upload      |
//! | GET    | /api/scans                            | all scans by submission order    |
//! | GET    | /api/scans/{id}                       | one scan record                  |
//! | GET    | /api/scans/{id}/image                 | the stored upload                |
//! | GET    | /api/review-queue                     | awaiting scans, oldest first     |
//! | POST   | /api/review-queue/{id}/decision       | reviewer labels                  |
//! | GET    | /api/reports/metrics                  | pipeline vs reviewer labels      |
//! | GET    | /api/labels                           | the closed label sets            |
//! | GET    | /api/health                           | liveness                         |

use std::collections::BTreeSet;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{header, HeaderMap, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use instqc_core::dataset::{DefectLabel, InstrumentLabel};
use instqc_core::imaging::{decode_png, load_png};
use instqc_core::metrics::{classification_report, confusion_matrix, MetricsReport};
use instqc_core::pipeline::{
    classify_defect, preprocess, run_scan_with_id, Disposition, LabelScore, PipelineConfig, ScanFailure,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::Semaphore;
use uuid::Uuid;

use crate::config::Config;
use crate::multipart;
use crate::store::{DefectRerun, ReviewDecision, ScanRecord, ScanStatus, Store, StoreError, StoreState};

pub struct AppState {
    pub store: Arc<Store>,
    pub pipeline: Arc<PipelineConfig>,
    /// Bounds concurrently running scans.
    pub scan_slots: Arc<Semaphore>,
    pub ui_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(store: Arc<Store>, pipeline: PipelineConfig, scan_workers: usize, ui_dir: Option<PathBuf>) -> Self {
        Self {
            store,
            pipeline: Arc::new(pipeline),
            scan_slots: Arc::new(Semaphore::new(scan_workers.max(1))),
            ui_dir,
        }
    }
}

type App = State<Arc<AppState>>;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
    detail: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
            detail: None,
        }
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = json!({ "error": self.message });
        if let Some(detail) = self.detail {
            body["detail"] = detail;
        }
        (self.status, Json(body)).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match e {
            StoreError::UnknownScan(_) => StatusCode::NOT_FOUND,
            StoreError::NotAwaitingReview { .. } | StoreError::DuplicateScan(_) => StatusCode::CONFLICT,
            StoreError::InvalidDecision(_) => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        Self::new(r.status(), r.body_text())
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: Arc<AppState>, max_upload_bytes: usize) -> Router {
    Router::new()
        .route("/api/health", get(|| async { Json(json!({ "status": "ok" })) }))
        .route("/api/labels", get(labels))
        .route("/api/scans", post(submit_scan).get(list_scans))
        .route("/api/scans/{id}", get(get_scan))
        .route("/api/scans/{id}/image", get(get_image))
        .route("/api/review-queue", get(review_queue))
        .route("/api/review-queue/{id}/decision", post(decide))
        .route("/api/reports/metrics", get(metrics))
        .fallback(static_file)
        .layer(DefaultBodyLimit::max(max_upload_bytes))
        .with_state(state)
}

/// Opens the store, loads the models and serves until Ctrl-C.
pub async fn serve(config: Config) -> anyhow::Result<()> {
    let svc = &config.service;
    let store = Arc::new(Store::open(&svc.store_dir, &svc.feedback_manifest())?);
    let pipeline = crate::backends::load_pipeline(&svc.model_dir, &config)?;
    let state = Arc::new(AppState::new(store, pipeline, svc.scan_workers, svc.ui_dir.clone()));
    let listener = tokio::net::TcpListener::bind((svc.bind.as_str(), svc.port)).await?;
    tracing::info!(addr = %listener.local_addr()?, "serving");
    axum::serve(listener, router(state, svc.max_upload_bytes))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct LabelSets {
    instruments: Vec<&'static str>,
    defects: Vec<&'static str>,
    confidence_threshold: f64,
}

async fn labels(State(app): App) -> Json<LabelSets> {
    Json(LabelSets {
        instruments: InstrumentLabel::ALL.iter().map(|l| l.name()).collect(),
        defects: DefectLabel::ALL.iter().map(|l| l.name()).collect(),
        confidence_threshold: app.pipeline.confidence_threshold,
    })
}

/// The uploaded PNG: a multipart file part, or the raw body.
fn upload_bytes(headers: &HeaderMap, body: &Bytes) -> ApiResult<Bytes> {
    let content_type = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    let bytes = if content_type.to_ascii_lowercase().starts_with("multipart/") {
        let boundary = multipart::boundary(content_type)
            .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, multipart::MultipartError::NoBoundary.to_string()))?;
        let parts = multipart::parse(body, &boundary).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        let data = multipart::image_part(&parts).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, e.to_string()))?;
        body.slice_ref(data)
    } else {
        body.clone()
    };
    if bytes.is_empty() {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "empty upload"));
    }
    Ok(bytes)
}

async fn submit_scan(State(app): App, headers: HeaderMap, body: Bytes) -> ApiResult<(StatusCode, Json<ScanRecord>)> {
    let png = upload_bytes(&headers, &body)?;
    let img = decode_png(&png).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, format!("not a PNG image: {e}")))?;
    let _permit = app.scan_slots.clone().acquire_owned().await.map_err(ApiError::internal)?;
    let worker = app.clone();
    let outcome = tokio::task::spawn_blocking(move || -> Result<Result<ScanRecord, ScanFailure>, StoreError> {
        match run_scan_with_id(Uuid::new_v4(), &img, &worker.pipeline) {
            Ok(result) => worker.store.submit(result, &png).map(Ok),
            Err(failure) => {
                worker.store.record_failure(failure.clone(), &png)?;
                Ok(Err(failure))
            }
        }
    })
    .await
    .map_err(ApiError::internal)??;
    match outcome {
        Ok(record) => {
            tracing::info!(scan = %record.scan_id, status = ?record.status, "scan stored");
            Ok((StatusCode::CREATED, Json(record)))
        }
        Err(failure) => {
            tracing::warn!(scan = %failure.scan_id, stage = %failure.stage, "scan failed");
            Err(ApiError {
                status: StatusCode::INTERNAL_SERVER_ERROR,
                message: failure.to_string(),
                detail: Some(serde_json::to_value(&failure).map_err(ApiError::internal)?),
            })
        }
    }
}

async fn list_scans(State(app): App) -> Json<Vec<ScanRecord>> {
    let state = app.store.snapshot();
    let mut scans: Vec<ScanRecord> = state.scans().cloned().collect();
    scans.sort_by_key(|s| s.sequence);
    Json(scans)
}

fn find_scan(state: &StoreState, id: Uuid) -> ApiResult<ScanRecord> {
    state
        .scan(&id)
        .cloned()
        .ok_or_else(|| ApiError::from(StoreError::UnknownScan(id)))
}

async fn get_scan(State(app): App, UrlPath(id): UrlPath<Uuid>) -> ApiResult<Json<ScanRecord>> {
    Ok(Json(find_scan(&app.store.snapshot(), id)?))
}

async fn get_image(State(app): App, UrlPath(id): UrlPath<Uuid>) -> ApiResult<Response> {
    let record = find_scan(&app.store.snapshot(), id)?;
    let bytes = tokio::fs::read(app.store.dir().join(&record.image_path))
        .await
        .map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes).into_response())
}

/// What the review UI shows for one queued scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub scan_id: Uuid,
    pub image_url: String,
    pub submitted_at: DateTime<Utc>,
    pub instrument: Disposition<InstrumentLabel>,
    pub instrument_top: Vec<LabelScore>,
    pub defect: Option<Disposition<DefectLabel>>,
    pub defect_top: Vec<LabelScore>,
}

impl From<&ScanRecord> for ReviewItem {
    fn from(r: &ScanRecord) -> Self {
        Self {
            scan_id: r.scan_id,
            image_url: format!("/api/scans/{}/image", r.scan_id),
            submitted_at: r.submitted_at,
            instrument: r.result.instrument,
            instrument_top: r.result.instrument_top.clone(),
            defect: r.result.defect,
            defect_top: r.result.defect_top.clone(),
        }
    }
}

async fn review_queue(State(app): App) -> Json<Vec<ReviewItem>> {
    Json(app.store.snapshot().queue().map(ReviewItem::from).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecisionRequest {
    pub reviewer_id: String,
    pub instrument: InstrumentLabel,
    pub defect: DefectLabel,
}

/// The label a stage-one disposition points at.
fn pipeline_instrument(d: &Disposition<InstrumentLabel>) -> InstrumentLabel {
    match *d {
        Disposition::Accepted { label, .. } | Disposition::FlaggedForReview { label, .. } => label,
        _ => InstrumentLabel::Miscellaneous,
    }
}

fn defect_label(d: &Disposition<DefectLabel>) -> DefectLabel {
    match *d {
        Disposition::Accepted { label, .. } | Disposition::FlaggedForReview { label, .. } => label,
        _ => DefectLabel::NoDefect,
    }
}

/// Runs the defect stage for the reviewer's instrument when the pipeline
/// did not already run it for that instrument.
fn rerun_defect(store: &Store, pipeline: &PipelineConfig, record: &ScanRecord, instrument: InstrumentLabel) -> Option<DefectRerun> {
    let already_ran = record.result.defect.is_some() && pipeline_instrument(&record.result.instrument) == instrument;
    if instrument.is_miscellaneous() || already_ran || !pipeline.defect_registry.contains_key(&instrument) {
        return None;
    }
    let attempt = || -> anyhow::Result<DefectRerun> {
        let img = load_png(store.dir().join(&record.image_path))?;
        let tensor = preprocess(&img, &pipeline.preprocess)?;
        let (disposition, probs) = classify_defect(&tensor, instrument, pipeline)?;
        let top = probs
            .top_k(3)
            .into_iter()
            .map(|(label, confidence)| LabelScore { label, confidence })
            .collect();
        Ok(DefectRerun { instrument, disposition, top })
    };
    attempt()
        .inspect_err(|e| tracing::warn!(scan = %record.scan_id, "defect re-run failed: {e:#}"))
        .ok()
}

async fn decide(
    State(app): App,
    UrlPath(id): UrlPath<Uuid>,
    body: Result<Json<DecisionRequest>, JsonRejection>,
) -> ApiResult<Json<ScanRecord>> {
    let Json(req) = body?;
    let record = find_scan(&app.store.snapshot(), id)?;
    if record.status != ScanStatus::AwaitingReview {
        return Err(ApiError {
            detail: Some(serde_json::to_value(&record).map_err(ApiError::internal)?),
            ..ApiError::from(StoreError::NotAwaitingReview {
                scan_id: id,
                status: record.status,
            })
        });
    }
    let worker = app.clone();
    let updated = tokio::task::spawn_blocking(move || {
        let rerun = rerun_defect(&worker.store, &worker.pipeline, &record, req.instrument);
        let decision = ReviewDecision {
            scan_id: id,
            reviewer_id: req.reviewer_id,
            decided_instrument: req.instrument,
            decided_defect: req.defect,
            timestamp: Utc::now(),
        };
        worker.store.decide(decision, rerun)
    })
    .await
    .map_err(ApiError::internal)??;
    tracing::info!(scan = %id, "review recorded");
    Ok(Json(updated))
}

/// Pipeline predictions scored against reviewer labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReviewMetrics {
    pub reviewed: usize,
    pub instrument: Option<MetricsReport>,
    pub defect: Option<MetricsReport>,
}

/// Stage-one predictions are the flagged or accepted label (`Miscellaneous`
/// when no instrument was detected). Stage-two predictions come from the
/// pipeline's defect stage, else from the re-run, else "No Defect"; an
/// unsure defect also counts as "No Defect". Each report covers the labels
/// that occur as a truth or prediction.
pub fn review_metrics(state: &StoreState) -> anyhow::Result<ReviewMetrics> {
    let mut inst = Vec::new();
    let mut def = Vec::new();
    for record in state.scans() {
        let Some((true_inst, true_def)) = record.final_labels() else { continue };
        inst.push((true_inst, pipeline_instrument(&record.result.instrument)));
        let rerun = record.review.as_ref().and_then(|r| r.defect_rerun.as_ref());
        let predicted = record
            .result
            .defect
            .as_ref()
            .or(rerun.map(|r| &r.disposition))
            .map_or(DefectLabel::NoDefect, defect_label);
        def.push((true_def, predicted));
    }
    fn report<L: Ord + Copy>(pairs: &[(L, L)], all: &[L], name: fn(L) -> &'static str) -> anyhow::Result<Option<MetricsReport>> {
        if pairs.is_empty() {
            return Ok(None);
        }
        let present: BTreeSet<L> = pairs.iter().flat_map(|&(t, p)| [t, p]).collect();
        let labels: Vec<String> = all.iter().filter(|l| present.contains(l)).map(|&l| name(l).to_string()).collect();
        let cm = confusion_matrix(&labels, pairs.iter().map(|&(t, p)| (name(t), name(p))))?;
        Ok(Some(classification_report(&cm)?))
    }
    Ok(ReviewMetrics {
        reviewed: inst.len(),
        instrument: report(&inst, &InstrumentLabel::ALL, InstrumentLabel::name)?,
        defect: report(&def, &DefectLabel::ALL, DefectLabel::name)?,
    })
}

async fn metrics(State(app): App) -> ApiResult<Json<ReviewMetrics>> {
    Ok(Json(review_metrics(&app.store.snapshot()).map_err(ApiError::internal)?))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "json" | "map" => "application/json",
        "svg" => "image/svg+xml",
        "png" => "image/png",
        "ico" => "image/x-icon",
        "woff2" => "font/woff2",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

/// Maps a request path into `root`, refusing anything that could escape it.
fn resolve_static(root: &Path, uri_path: &str) -> Option<PathBuf> {
    let mut path = root.to_path_buf();
    for component in Path::new(uri_path.trim_start_matches('/')).components() {
        match component {
            Component::Normal(part) => path.push(part),
            Component::CurDir => {}
            _ => return None,
        }
    }
    if path.is_dir() {
        path.push("index.html");
    }
    path.is_file().then_some(path)
}

async fn static_file(State(app): App, uri: Uri) -> ApiResult<Response> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, format!("no route for {}", uri.path()));
    if uri.path().starts_with("/api/") {
        return Err(not_found());
    }
    let root = app.ui_dir.as_deref().ok_or_else(not_found)?;
    let path = resolve_static(root, uri.path()).ok_or_else(not_found)?;
    let bytes = tokio::fs::read(&path).await.map_err(ApiError::internal)?;
    Ok(([(header::CONTENT_TYPE, content_type(&path))], bytes).into_response())
}
