//! HTTP routes. Handlers run the blocking model work on the blocking pool
//! and answer with JSON that carries the model version.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use bemtrace_core::conflict::{group_conflicts, GroupKey, ResolveError};
use bemtrace_core::geom::PlanarPolygon;
use bemtrace_core::model::{Conflict, EditRecord, Id, LedgerEntry, Resolution, SbType};
use bemtrace_core::network::export_bem;
use bemtrace_core::pipeline::{ClassCounts, ConversionConfig, PipelineError};
use bemtrace_core::trace::{
    scene, selection_context, ObjectKind, SceneFilter, Selection, TraceError, Variant, ViewKind,
};
use bemtrace_core::validate::{validate_snapshot_with, ValidationReport};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::registry::{ModelVersion, Registry, ServiceError};

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

fn bad(msg: impl Into<String>) -> ApiError {
    ApiError(ServiceError::BadRequest(msg.into()))
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        use ServiceError as S;
        match &self.0 {
            S::UnknownModel(_) => (StatusCode::NOT_FOUND, "UnknownModel"),
            S::UnknownBoundary(_) => (StatusCode::NOT_FOUND, "UnknownObject"),
            S::StaleVersion { .. } => (StatusCode::CONFLICT, "VersionMismatch"),
            S::NotConverted => (StatusCode::CONFLICT, "NotConverted"),
            S::BadRequest(_) => (StatusCode::BAD_REQUEST, "BadRequest"),
            S::Io { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "Io"),
            S::Resolve(ResolveError::UnknownConflict(_)) => (StatusCode::NOT_FOUND, "UnknownConflict"),
            S::Resolve(ResolveError::IllegalResolution(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "IllegalResolution"),
            S::Resolve(ResolveError::AlreadyResolved(_)) => (StatusCode::CONFLICT, "AlreadyResolved"),
            S::Pipeline(PipelineError::Trace(t)) => trace_status(t),
            S::Pipeline(PipelineError::Config(_)) => (StatusCode::BAD_REQUEST, "Config"),
            S::Pipeline(PipelineError::Ingest(_) | PipelineError::Schema(_)) => (StatusCode::BAD_REQUEST, "Parse"),
            S::Pipeline(PipelineError::Classify(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "Classify"),
            S::Pipeline(PipelineError::Resolve(_)) => (StatusCode::UNPROCESSABLE_ENTITY, "Resolve"),
        }
    }
}

fn trace_status(t: &TraceError) -> (StatusCode, &'static str) {
    match t {
        TraceError::VersionMismatch { .. } => (StatusCode::CONFLICT, "VersionMismatch"),
        TraceError::IllegalSelection { .. } => (StatusCode::BAD_REQUEST, "IllegalSelection"),
        TraceError::UnknownObject { .. } => (StatusCode::NOT_FOUND, "UnknownObject"),
        TraceError::VariantUnavailable(_) => (StatusCode::CONFLICT, "VariantUnavailable"),
    }
}

impl From<TraceError> for ServiceError {
    fn from(e: TraceError) -> Self {
        ServiceError::Pipeline(PipelineError::Trace(e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            log::error!("{}", self.0);
        }
        (status, Json(json!({ "error": code, "message": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f).await.map_err(|e| bad(format!("task failed: {e}")))?
}

pub fn router(registry: Arc<Registry>) -> Router {
    Router::new()
        .route("/models", get(list_models).post(upload_model))
        .route("/models/{id}", get(model_summary))
        .route("/models/{id}/validation", get(validation))
        .route("/models/{id}/conflicts", get(conflicts))
        .route("/models/{id}/conflicts/{cid}/resolve", post(resolve_conflict))
        .route("/models/{id}/convert", post(convert_model))
        .route("/models/{id}/report", get(report))
        .route("/models/{id}/bem", get(bem))
        .route("/models/{id}/scene", get(scene_payload))
        .route("/models/{id}/selection", get(selection))
        .route("/models/{id}/boundaries/{bid}", get(boundary))
        .with_state(registry)
}

async fn list_models(State(r): State<Arc<Registry>>) -> Json<Vec<crate::registry::ModelSummary>> {
    Json(r.list())
}

#[derive(Deserialize)]
struct UploadQuery {
    name: Option<String>,
}

async fn upload_model(
    State(r): State<Arc<Registry>>,
    Query(q): Query<UploadQuery>,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let name = q.name.unwrap_or_else(|| "upload".to_string());
    let m = blocking(move || Ok(r.load(&name, &body)?)).await?;
    let body = json!({ "id": m.id, "name": m.name, "version": m.version, "ingest": m.ingest });
    Ok((StatusCode::CREATED, Json(body)))
}

async fn model_summary(State(r): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<impl IntoResponse> {
    Ok(Json(r.get(&id)?.summary()))
}

#[derive(Serialize)]
struct ValidationBody {
    version: u64,
    #[serde(flatten)]
    report: ValidationReport,
}

async fn validation(State(r): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Json<ValidationBody>> {
    let m = r.get(&id)?;
    let report = validate_snapshot_with(&m.base, &m.config.tolerances);
    Ok(Json(ValidationBody { version: m.version, report }))
}

#[derive(Deserialize)]
struct ConflictQuery {
    #[serde(default)]
    grouped: bool,
}

#[derive(Serialize)]
struct ConflictGroup {
    #[serde(flatten)]
    key: GroupKey,
    conflicts: Vec<Conflict>,
}

async fn conflicts(
    State(r): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<ConflictQuery>,
) -> ApiResult<Response> {
    let m = r.get(&id)?;
    let open = m.open_conflicts();
    Ok(if q.grouped {
        let groups: Vec<ConflictGroup> = group_conflicts(&m.conflicts)
            .into_iter()
            .map(|(key, conflicts)| ConflictGroup { key, conflicts })
            .collect();
        Json(json!({ "version": m.version, "open": open, "groups": groups })).into_response()
    } else {
        Json(json!({ "version": m.version, "open": open, "conflicts": m.conflicts })).into_response()
    })
}

#[derive(Deserialize)]
struct ResolveRequest {
    /// Version the client resolved against; stale requests are refused.
    #[serde(default)]
    version: Option<u64>,
    #[serde(flatten)]
    resolution: Resolution,
}

#[derive(Serialize)]
struct ResolveBody {
    version: u64,
    conflict: String,
    open: usize,
    ledger: Vec<LedgerEntry>,
}

async fn resolve_conflict(
    State(r): State<Arc<Registry>>,
    Path((id, cid)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Json<ResolveBody>> {
    let req: ResolveRequest = serde_json::from_slice(&body).map_err(|e| bad(format!("resolution: {e}")))?;
    let m = blocking(move || Ok(r.resolve(&id, &cid, &req.resolution, req.version)?)).await?;
    let conflict = m.base.ledger().last().map(|e| e.conflict.clone()).unwrap_or_default();
    Ok(Json(ResolveBody { version: m.version, conflict, open: m.open_conflicts(), ledger: m.base.ledger().to_vec() }))
}

#[derive(Serialize)]
struct BemSummary {
    rooms: usize,
    connections: usize,
    external_connections: usize,
    class_counts: ClassCounts,
    open_conflicts: usize,
    blocked: bool,
}

#[derive(Serialize)]
struct ConvertBody {
    version: u64,
    bem: BemSummary,
    warnings: Vec<String>,
}

async fn convert_model(
    State(r): State<Arc<Registry>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<ConvertBody>> {
    let config =
        if body.iter().all(u8::is_ascii_whitespace) { None } else { Some(ConversionConfig::from_json(&body)?) };
    let m = blocking(move || Ok(r.convert(&id, config)?)).await?;
    let conv = m.converted()?;
    let n = &conv.network;
    let bem = BemSummary {
        rooms: n.rooms.len(),
        connections: n.connections.len(),
        external_connections: n.connections.iter().filter(|c| c.category.is_external()).count(),
        class_counts: conv.report.class_counts.clone(),
        open_conflicts: conv.report.open_conflicts,
        blocked: conv.report.blocked,
    };
    Ok(Json(ConvertBody { version: m.version, bem, warnings: conv.report.warnings.clone() }))
}

fn json_bytes(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn report(State(r): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let m = r.get(&id)?;
    Ok(json_bytes(m.converted()?.report.to_json()))
}

async fn bem(State(r): State<Arc<Registry>>, Path(id): Path<String>) -> ApiResult<Response> {
    let m = r.get(&id)?;
    Ok(json_bytes(export_bem(&m.converted()?.network)))
}

fn parse<T: std::str::FromStr<Err = String>>(name: &str, value: Option<&str>) -> ApiResult<T> {
    value.ok_or_else(|| bad(format!("missing query parameter `{name}`")))?.parse().map_err(bad)
}

fn parse_or<T: std::str::FromStr<Err = String>>(value: Option<&str>, default: T) -> ApiResult<T> {
    value.map_or(Ok(default), |v| v.parse().map_err(bad))
}

async fn scene_payload(
    State(r): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let m = r.get(&id)?;
    let view: ViewKind = parse("view", q.get("view").map(String::as_str))?;
    let variant = parse_or(q.get("variant").map(String::as_str), Variant::Raw)?;
    let filter: SceneFilter = match q.get("filter").filter(|f| !f.is_empty()) {
        Some(f) => serde_json::from_str(f).map_err(|e| bad(format!("filter: {e}")))?,
        None => SceneFilter::default(),
    };
    let network = m.conversion.as_ref().map(|c| &c.network);
    let payload = scene(&m.display(), network, view, &filter, variant)?;
    Ok(Json(payload).into_response())
}

async fn selection(
    State(r): State<Arc<Registry>>,
    Path(id): Path<String>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let m = r.get(&id)?;
    let get = |k: &str| q.get(k).map(String::as_str);
    let kind: ObjectKind = parse("kind", get("kind"))?;
    let source: ViewKind = parse("source", get("source"))?;
    let target: ViewKind = parse("target", get("target"))?;
    let object = get("object").ok_or_else(|| bad("missing query parameter `object`"))?;
    let expected = match get("version") {
        Some(v) => Some(v.parse::<u64>().map_err(|e| bad(format!("version: {e}")))?),
        None => None,
    };
    m.check_version(expected)?;
    let sel = Selection { kind, id: Id::new(object), source };
    let h = selection_context(&m.converted()?.trace, &sel, target)?;
    Ok(Json(h).into_response())
}

#[derive(Serialize)]
struct BoundaryBody<'a> {
    version: u64,
    id: &'a Id,
    space: &'a Id,
    element: &'a Id,
    sb_type: SbType,
    variant: Variant,
    polygon: &'a PlanarPolygon,
    area: f64,
    edits: &'a [EditRecord],
    connection: Option<&'a Id>,
    partner: Option<&'a Id>,
}

async fn boundary(
    State(r): State<Arc<Registry>>,
    Path((id, bid)): Path<(String, String)>,
    Query(q): Query<BTreeMap<String, String>>,
) -> ApiResult<Response> {
    let m: Arc<ModelVersion> = r.get(&id)?;
    let variant = parse_or(q.get("variant").map(String::as_str), Variant::Raw)?;
    let bid = Id::new(bid);
    let b = m.current().boundary(&bid).ok_or_else(|| ServiceError::UnknownBoundary(bid.clone()))?;
    let polygon = match variant {
        Variant::Raw => &b.raw,
        Variant::Enhanced => b.enhanced.as_ref().ok_or(TraceError::VariantUnavailable(Variant::Enhanced))?,
    };
    let trace = m.conversion.as_ref().and_then(|c| c.trace.boundaries.get(&bid));
    let body = BoundaryBody {
        version: m.version,
        id: &b.id,
        space: &b.space,
        element: &b.element,
        sb_type: b.sb_type,
        variant,
        polygon,
        area: polygon.area(),
        edits: &b.edits,
        connection: trace.and_then(|t| t.connection.as_ref()),
        partner: trace.and_then(|t| t.partner.as_ref()),
    };
    Ok(Json(body).into_response())
}
