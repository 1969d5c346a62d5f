//! HTTP API.
//!
//! ```text
//! POST /sessions                 {composition?, seed?} -> 201 {session_id, total}
//! GET  /sessions/{id}            progress
//! GET  /sessions/{id}/next       blinded item, 410 once complete
//! POST /sessions/{id}/ratings    {item_id, judgment, latency_ms}, 409 out of order
//! GET  /sessions/{id}/report     ?partial=true&format=json|csv, 403 until complete
//! ```

use std::io::Cursor;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine;
use image::{ImageBuffer, ImageFormat, Luma};
use mrxlate_core::data::{fit_to_shape, load_slice, Domain};
use serde::{Deserialize, Serialize};
use tower_http::cors::CorsLayer;

use crate::error::Error;
use crate::pool::ImagePool;
use crate::report::{score_session, tally};
use crate::session::{create_session, Composition, Label};
use crate::store::Store;

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<Store>,
    pub real_pool: Arc<ImagePool>,
    pub synthetic_pool: Arc<ImagePool>,
    /// Used when a create request carries no seed.
    pub default_seed: u64,
    /// Every served image is center-cropped/padded to this `(height, width)`
    /// so size cannot give away provenance.
    pub display_shape: Option<(usize, usize)>,
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/sessions", post(create))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/next", get(next))
        .route("/sessions/{id}/ratings", post(rate))
        .route("/sessions/{id}/report", get(report))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

#[derive(Debug, Default, Deserialize)]
pub struct CreateRequest {
    #[serde(default)]
    pub composition: Option<Composition>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub total: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionStatus {
    pub session_id: String,
    pub total: usize,
    pub cursor: usize,
    pub completed: bool,
    pub created_at_ms: u64,
}

/// What a rater sees: no truth, no provenance.
#[derive(Debug, Serialize, Deserialize)]
pub struct BlindedItem {
    pub session_id: String,
    pub item_id: String,
    pub position: usize,
    pub total: usize,
    pub domain: Domain,
    pub width: usize,
    pub height: usize,
    /// 16-bit grayscale PNG, min-max scaled per image.
    pub image_png_base64: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RatingRequest {
    pub item_id: String,
    pub judgment: Label,
    pub latency_ms: u64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RatingAck {
    pub item_id: String,
    pub cursor: usize,
    pub total: usize,
    pub completed: bool,
}

#[derive(Debug, Default, Deserialize)]
pub struct ReportQuery {
    #[serde(default)]
    pub partial: bool,
    #[serde(default)]
    pub format: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub code: String,
}

pub struct ApiError(StatusCode, String, Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        let (status, code) = match &e {
            Error::Config(_) => (StatusCode::BAD_REQUEST, "config"),
            Error::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            Error::SessionComplete(_) => (StatusCode::GONE, "session_complete"),
            Error::OrderViolation(_) => (StatusCode::CONFLICT, "order_violation"),
            Error::EmptySession(_) => (StatusCode::CONFLICT, "empty_session"),
            Error::Format(_) | Error::Io(_) | Error::Image(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        };
        ApiError(status, code.to_string(), e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.0.is_server_error() {
            log::error!("{}", self.2);
        }
        let body = ErrorBody {
            error: self.2.to_string(),
            code: self.1,
        };
        (self.0, Json(body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

async fn create(State(st): State<AppState>, body: Option<Json<CreateRequest>>) -> ApiResult<(StatusCode, Json<CreateResponse>)> {
    let req = body.map(|Json(r)| r).unwrap_or_default();
    let composition = req.composition.unwrap_or_default();
    let seed = req.seed.unwrap_or(st.default_seed);
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = create_session(id.clone(), &st.real_pool, &st.synthetic_pool, &composition, seed)?;
    let total = session.total();
    st.store.insert(session)?;
    log::info!("session {id} created with {total} items (seed {seed})");
    Ok((StatusCode::CREATED, Json(CreateResponse { session_id: id, total })))
}

async fn status(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SessionStatus>> {
    let shared = st.store.get(&id)?;
    let s = shared.lock().expect("session lock");
    Ok(Json(SessionStatus {
        session_id: s.session_id.clone(),
        total: s.total(),
        cursor: s.cursor,
        completed: s.completed,
        created_at_ms: s.created_at_ms,
    }))
}

async fn next(State(st): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<BlindedItem>> {
    let (item, position, total) = {
        let shared = st.store.get(&id)?;
        let s = shared.lock().expect("session lock");
        (s.next_item()?.clone(), s.cursor, s.total())
    };
    let (png, width, height) = render_png(&item.image_ref, item.domain, st.display_shape)?;
    Ok(Json(BlindedItem {
        session_id: id,
        item_id: item.item_id,
        position,
        total,
        domain: item.domain,
        width,
        height,
        image_png_base64: base64::engine::general_purpose::STANDARD.encode(png),
    }))
}

async fn rate(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<RatingRequest>,
) -> ApiResult<Json<RatingAck>> {
    let (_, cursor, completed) = st.store.rate(&id, &req.item_id, req.judgment, req.latency_ms)?;
    let total = st.store.get(&id)?.lock().expect("session lock").total();
    Ok(Json(RatingAck {
        item_id: req.item_id,
        cursor,
        total,
        completed,
    }))
}

async fn report(State(st): State<AppState>, Path(id): Path<String>, Query(q): Query<ReportQuery>) -> ApiResult<Response> {
    let report = {
        let shared = st.store.get(&id)?;
        let s = shared.lock().expect("session lock");
        if !s.completed && !q.partial {
            let body = ErrorBody {
                error: format!("session {id} is not complete ({}/{} rated)", s.cursor, s.total()),
                code: "incomplete".into(),
            };
            return Ok((StatusCode::FORBIDDEN, Json(body)).into_response());
        }
        if q.partial {
            tally(&s)
        } else {
            score_session(&s)?
        }
    };
    match q.format.as_deref().unwrap_or("json") {
        "json" => Ok(Json(report).into_response()),
        "csv" => Ok(([(header::CONTENT_TYPE, "text/csv")], report.to_csv_string()?).into_response()),
        other => Err(Error::Config(format!("unknown report format {other:?} (json|csv)")).into()),
    }
}

/// Loads an image and encodes it as a min-max scaled 16-bit PNG.
pub fn render_png(
    path: &std::path::Path,
    domain: Domain,
    shape: Option<(usize, usize)>,
) -> Result<(Vec<u8>, usize, usize), Error> {
    let slice = load_slice::<f64>(path, None, domain, "")?;
    let grid = match shape {
        Some((h, w)) => fit_to_shape(slice.pixels(), h, w)?,
        None => slice.pixels().clone(),
    };
    let (lo, hi) = grid.min_max();
    let span = if hi > lo { hi - lo } else { 1.0 };
    let levels: Vec<u16> = grid
        .data()
        .iter()
        .map(|v| ((v - lo) / span * 65535.0).round() as u16)
        .collect();
    let (w, h) = (grid.width(), grid.height());
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, levels).expect("buffer matches grid");
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok((out.into_inner(), w, h))
}
