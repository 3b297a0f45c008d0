//! Review HTTP service over one annotation file.
//!
//! Reads see the last committed snapshot. Mutations are serialised, written
//! to disk (temp file + rename) and only then published and acknowledged.
//! Box ids may contain `/`; `/boxes/` takes the rest of the path as the id.

use std::fs::File;
use std::io::BufReader;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use boxlift_core::geometry::axis_angle;
use boxlift_core::io::read_ply;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::schema::{load_annotations, save_annotations_atomic, AnnotationFile, AnnotationRecord, AuditEntry, ImageRecord, Provenance, SchemaError};

pub const DEFAULT_MAX_POINTS: usize = 200_000;

/// Called after the temp file is durable and before it replaces the original.
pub type SaveHook = Arc<dyn Fn() + Send + Sync>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot load annotations: {0}")]
    Load(#[source] SchemaError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server error: {0}")]
    Serve(#[source] std::io::Error),
}

/// Error body: `{"error": <code>, "message": <text>}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self { status, code, message: message.into() }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("{what} {id:?} not found"))
    }

    fn bad_request(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, code, message)
    }

    fn conflict(code: &'static str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, code, message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({ "error": self.code, "message": self.message }))).into_response()
    }
}

/// Box edit. Rotation edits are yaw-only, about the box's own up axis.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxPatch {
    #[serde(default)]
    pub center_delta: Option<[f64; 3]>,
    #[serde(default)]
    pub dims_delta: Option<[f64; 3]>,
    /// Radians.
    #[serde(default)]
    pub yaw_delta: Option<f64>,
    /// Expected current revision; a mismatch is a 409.
    #[serde(default)]
    pub revision: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImageSummary {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub rejected: bool,
    pub boxes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PointMap {
    /// Points in the stored map before decimation.
    pub total: usize,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ImageDetail {
    pub image: ImageRecord,
    pub boxes: Vec<AnnotationRecord>,
    pub point_map: Option<PointMap>,
}

pub struct Store {
    path: PathBuf,
    scenes: PathBuf,
    snapshot: RwLock<Arc<AnnotationFile>>,
    writer: Mutex<()>,
    hook: Option<SaveHook>,
}

impl Store {
    /// Loads and validates the annotation file; a corrupt file is an error.
    pub fn open(path: &Path, scenes: &Path) -> Result<Self, ServiceError> {
        let doc = load_annotations(path).map_err(ServiceError::Load)?;
        Ok(Self { path: path.into(), scenes: scenes.into(), snapshot: RwLock::new(Arc::new(doc)), writer: Mutex::new(()), hook: None })
    }

    pub fn with_save_hook(mut self, hook: SaveHook) -> Self {
        self.hook = Some(hook);
        self
    }

    pub fn snapshot(&self) -> Arc<AnnotationFile> {
        self.snapshot.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Applies `f` to a copy of the document, persists it, then publishes it.
    pub fn mutate<T>(&self, f: impl FnOnce(&mut AnnotationFile) -> Result<T, ApiError>) -> Result<T, ApiError> {
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let mut doc = (*self.snapshot()).clone();
        let out = f(&mut doc)?;
        save_annotations_atomic(&self.path, &doc, self.hook.as_deref()).map_err(|e| ApiError::internal(e.to_string()))?;
        *self.snapshot.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(doc);
        Ok(out)
    }

    /// Stored scene points for an image, decimated by a uniform stride.
    pub fn point_map(&self, image_id: &str, max_points: usize) -> Result<Option<PointMap>, ApiError> {
        let path = self.scenes.join(format!("{image_id}.ply"));
        let Ok(file) = File::open(&path) else { return Ok(None) };
        let mesh = read_ply(BufReader::new(file)).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
        Ok(Some(decimate(&mesh.vertices, max_points)))
    }
}

pub fn decimate(points: &[Vector3<f64>], max_points: usize) -> PointMap {
    let total = points.len();
    let stride = if max_points == 0 { usize::MAX } else { total.div_ceil(max_points).max(1) };
    let points = if max_points == 0 { Vec::new() } else { points.iter().step_by(stride).map(|p| [p.x, p.y, p.z]).collect() };
    PointMap { total, points }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn audit(doc: &mut AnnotationFile, action: &str, target: &str, detail: Value) {
    let seq = doc.audit.last().map_or(1, |e| e.seq + 1);
    doc.audit.push(AuditEntry { seq, unix_time: now(), action: action.into(), target: target.into(), detail });
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("invalid_body", e.to_string()))
}

/// Applies a patch to one record in place.
pub fn apply_patch(rec: &mut AnnotationRecord, patch: &BoxPatch) -> Result<(), ApiError> {
    if let Some(rev) = patch.revision {
        if rev != rec.revision {
            return Err(ApiError::conflict("revision_mismatch", format!("box {:?} is at revision {}, not {rev}", rec.id, rec.revision)));
        }
    }
    if rec.provenance == Provenance::Rejected {
        return Err(ApiError::conflict("rejected", format!("box {:?} is rejected", rec.id)));
    }
    let bbox = rec.bbox().map_err(|e| ApiError::internal(e.to_string()))?;
    let Some(mut b) = bbox else {
        return Err(ApiError::conflict("no_geometry", format!("box {:?} has no geometry", rec.id)));
    };
    let all = patch.center_delta.iter().flatten().chain(patch.dims_delta.iter().flatten()).chain(patch.yaw_delta.iter());
    if all.clone().any(|v| !v.is_finite()) {
        return Err(ApiError::bad_request("invalid_value", "deltas must be finite"));
    }
    if let Some(d) = patch.center_delta {
        b.center += Vector3::from(d);
    }
    if let Some(d) = patch.dims_delta {
        b.dims += Vector3::from(d);
        if b.dims.iter().any(|&v| v <= 0.0) {
            return Err(ApiError::bad_request("invalid_value", format!("dims would become {:?}", b.dims.as_slice())));
        }
    }
    if let Some(yaw) = patch.yaw_delta {
        let up = b.rotation.column(1).into_owned();
        b.rotation = axis_angle(&up, yaw) * b.rotation;
    }
    rec.set_box(&b);
    rec.provenance = Provenance::Refined;
    rec.revision += 1;
    Ok(())
}

async fn list_images(State(store): State<Arc<Store>>) -> Json<Vec<ImageSummary>> {
    let doc = store.snapshot();
    Json(
        doc.images
            .iter()
            .map(|im| ImageSummary {
                id: im.id.clone(),
                width: im.width,
                height: im.height,
                rejected: im.rejected,
                boxes: doc.annotations.iter().filter(|a| a.image_id == im.id).count(),
            })
            .collect(),
    )
}

#[derive(Debug, Deserialize)]
struct DetailQuery {
    max_points: Option<usize>,
}

async fn get_image(State(store): State<Arc<Store>>, UrlPath(id): UrlPath<String>, Query(q): Query<DetailQuery>) -> Result<Json<ImageDetail>, ApiError> {
    let doc = store.snapshot();
    let image = doc.image(&id).cloned().ok_or_else(|| ApiError::not_found("image", &id))?;
    let boxes = doc.annotations.iter().filter(|a| a.image_id == id).cloned().collect();
    let max_points = q.max_points.unwrap_or(DEFAULT_MAX_POINTS);
    let point_map = tokio::task::spawn_blocking(move || store.point_map(&id, max_points)).await.map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(ImageDetail { image, boxes, point_map }))
}

async fn run_mutation<T: Send + 'static>(
    store: Arc<Store>,
    f: impl FnOnce(&mut AnnotationFile) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || store.mutate(f)).await.map_err(|e| ApiError::internal(e.to_string()))?
}

async fn patch_box(State(store): State<Arc<Store>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<AnnotationRecord>, ApiError> {
    let patch: BoxPatch = parse_body(&body)?;
    let rec = run_mutation(store, move |doc| {
        let rec = doc.annotations.iter_mut().find(|a| a.id == id).ok_or_else(|| ApiError::not_found("box", &id))?;
        apply_patch(rec, &patch)?;
        let rec = rec.clone();
        let detail = json!({
            "center_delta": patch.center_delta,
            "dims_delta": patch.dims_delta,
            "yaw_delta": patch.yaw_delta,
            "revision": rec.revision,
        });
        audit(doc, "update", &id, detail);
        Ok(rec)
    })
    .await?;
    Ok(Json(rec))
}

async fn delete_box(State(store): State<Arc<Store>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, ApiError> {
    run_mutation(store, move |doc| {
        let pos = doc.annotations.iter().position(|a| a.id == id).ok_or_else(|| ApiError::not_found("box", &id))?;
        let removed = doc.annotations.remove(pos);
        let detail = serde_json::to_value(&removed).unwrap_or(Value::Null);
        audit(doc, "delete", &id, detail);
        Ok(Json(json!({ "deleted": id })))
    })
    .await
}

async fn reject_image(State(store): State<Arc<Store>>, UrlPath(id): UrlPath<String>, body: Bytes) -> Result<Json<ImageSummary>, ApiError> {
    #[derive(Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct RejectBody {
        #[serde(default)]
        reason: Option<String>,
    }
    let body: RejectBody = if body.iter().all(u8::is_ascii_whitespace) { RejectBody::default() } else { parse_body(&body)? };
    run_mutation(store, move |doc| {
        let image = doc.images.iter_mut().find(|im| im.id == id).ok_or_else(|| ApiError::not_found("image", &id))?;
        image.rejected = true;
        let (width, height) = (image.width, image.height);
        let mut boxes = 0;
        for a in doc.annotations.iter_mut().filter(|a| a.image_id == id) {
            a.provenance = Provenance::Rejected;
            a.revision += 1;
            boxes += 1;
        }
        audit(doc, "reject", &id, json!({ "reason": body.reason, "boxes": boxes }));
        Ok(Json(ImageSummary { id, width, height, rejected: true, boxes }))
    })
    .await
}

async fn get_audit(State(store): State<Arc<Store>>) -> Json<Vec<AuditEntry>> {
    Json(store.snapshot().audit.clone())
}

async fn fallback() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/images", get(list_images))
        .route("/images/{id}", get(get_image))
        .route("/images/{id}/reject", post(reject_image))
        .route("/boxes/{*id}", patch(patch_box).delete(delete_box))
        .route("/audit", get(get_audit))
        .fallback(fallback)
        .with_state(store)
}

/// Binds `addr`, prints `listening on <addr>` and serves until Ctrl-C.
pub async fn serve(store: Store, addr: &str) -> Result<(), ServiceError> {
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServiceError::Bind { addr: addr.into(), source })?;
    let local: SocketAddr = listener.local_addr().map_err(ServiceError::Serve)?;
    println!("listening on {local}");
    log::info!("serving {} on {local}", store.path.display());
    axum::serve(listener, router(Arc::new(store)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(ServiceError::Serve)
}
