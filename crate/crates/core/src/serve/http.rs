use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::io::{AsyncReadExt, AsyncSeekExt};

use super::session::{CreateSession, Session, SessionManager};
use super::ServeError;
use crate::model::Label;

type Shared = Arc<SessionManager>;

impl IntoResponse for ServeError {
    fn into_response(self) -> Response {
        #[derive(Serialize)]
        struct Body<'a> {
            code: &'a str,
            message: String,
        }
        let status = StatusCode::from_u16(self.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(Body { code: self.code(), message: self.to_string() })).into_response()
    }
}

fn body<T>(r: Result<Json<T>, JsonRejection>) -> Result<T, ServeError> {
    r.map(|Json(v)| v).map_err(|e| ServeError::BadRequest(e.body_text()))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ServeError> + Send + 'static) -> Result<T, ServeError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ServeError::Internal(e.to_string()))?
}

pub fn router(manager: Shared) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session).get(list_sessions))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/labels", post(submit_label))
        .route("/api/sessions/{id}/retrain", post(retrain))
        .route("/api/sessions/{id}/queue", get(get_queue))
        .route("/api/clips/{id}/features", get(clip_features))
        .route("/api/clips/{id}/media", get(clip_media))
        .with_state(manager)
}

/// Binds `addr`, reports the bound address on stdout and serves until ctrl-c.
pub async fn run_server(manager: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    println!("listening on http://{local}");
    log::info!("serving {} sessions from {}", manager.ids().len(), manager.root().display());
    axum::serve(listener, router(manager))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn create_session(
    State(m): State<Shared>,
    req: Result<Json<CreateSession>, JsonRejection>,
) -> Result<impl IntoResponse, ServeError> {
    let req = body(req)?;
    let session = blocking(move || m.create(req)).await?;
    Ok((StatusCode::CREATED, Json((*session.view()).clone())))
}

async fn list_sessions(State(m): State<Shared>) -> impl IntoResponse {
    Json(serde_json::json!({ "sessions": m.ids() }))
}

async fn get_session(State(m): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ServeError> {
    Ok(Json((*m.get(&id)?.view()).clone()))
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct LabelRequest {
    clip_id: String,
    label: Label,
    coder_id: Option<String>,
}

async fn submit_label(
    State(m): State<Shared>,
    UrlPath(id): UrlPath<String>,
    req: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<impl IntoResponse, ServeError> {
    let req = body(req)?;
    let session = m.get(&id)?;
    let coder = req.coder_id.unwrap_or_else(|| session.config().serve.default_coder.clone());
    let ack = blocking(move || session.submit_label(&req.clip_id, req.label, &coder)).await?;
    Ok(Json(ack))
}

async fn retrain(State(m): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ServeError> {
    let session = m.get(&id)?;
    Ok(Json(blocking(move || session.retrain()).await?))
}

async fn get_queue(State(m): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, ServeError> {
    let view = m.get(&id)?.view();
    Ok(Json(serde_json::json!({
        "sessionId": view.session_id,
        "modelRef": view.model_ref,
        "labeledCount": view.labeled_count,
        "queue": view.queue,
    })))
}

#[derive(Deserialize)]
struct ClipQuery {
    session: Option<String>,
}

fn clip_session(m: &SessionManager, clip: &str, q: &ClipQuery) -> Result<Arc<Session>, ServeError> {
    match &q.session {
        Some(sid) => {
            let s = m.get(sid)?;
            s.manifest().clip(clip).ok_or_else(|| ServeError::UnknownClip(clip.to_string()))?;
            Ok(s)
        }
        None => m.find_clip(clip).ok_or_else(|| ServeError::UnknownClip(clip.to_string())),
    }
}

async fn clip_features(
    State(m): State<Shared>,
    UrlPath(clip): UrlPath<String>,
    Query(q): Query<ClipQuery>,
) -> Result<impl IntoResponse, ServeError> {
    let s = clip_session(&m, &clip, &q)?;
    let (micro, shots) = s.clip_features(&clip).ok_or_else(|| ServeError::UnknownClip(clip.clone()))?;
    Ok(Json(serde_json::json!({
        "clipId": clip,
        "sessionId": s.id(),
        "microClips": micro,
        "shots": shots,
    })))
}

/// Byte range requested by a `Range` header against a body of `len` bytes,
/// as an inclusive `(first, last)` pair. `Ok(None)` means the whole body.
/// Only the first range of a multi-range request is honored.
pub fn parse_range(header: Option<&str>, len: u64) -> Result<Option<(u64, u64)>, ServeError> {
    let Some(h) = header else { return Ok(None) };
    let spec = h.trim().strip_prefix("bytes=").ok_or(ServeError::RangeNotSatisfiable)?;
    let first = spec.split(',').next().unwrap_or("").trim();
    let (a, b) = first.split_once('-').ok_or(ServeError::RangeNotSatisfiable)?;
    let parse = |s: &str| s.trim().parse::<u64>().map_err(|_| ServeError::RangeNotSatisfiable);
    let (start, end) = match (a.trim().is_empty(), b.trim().is_empty()) {
        (true, true) => return Err(ServeError::RangeNotSatisfiable),
        (true, false) => {
            let n = parse(b)?;
            if n == 0 || len == 0 {
                return Err(ServeError::RangeNotSatisfiable);
            }
            (len.saturating_sub(n), len - 1)
        }
        (false, true) => (parse(a)?, len.saturating_sub(1)),
        (false, false) => (parse(a)?, parse(b)?.min(len.saturating_sub(1))),
    };
    if start >= len || start > end {
        return Err(ServeError::RangeNotSatisfiable);
    }
    Ok(Some((start, end)))
}

fn content_type(p: &Path) -> &'static str {
    match p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref() {
        Some("mp4" | "m4v") => "video/mp4",
        Some("webm") => "video/webm",
        Some("wav") => "audio/wav",
        Some("mp3") => "audio/mpeg",
        Some("ogg") => "audio/ogg",
        _ => "application/octet-stream",
    }
}

async fn clip_media(
    State(m): State<Shared>,
    UrlPath(clip): UrlPath<String>,
    Query(q): Query<ClipQuery>,
    headers: HeaderMap,
) -> Result<Response, ServeError> {
    let s = clip_session(&m, &clip, &q)?;
    let path: PathBuf = s
        .manifest()
        .clip(&clip)
        .and_then(|c| c.media_path.as_ref())
        .map(|p| s.manifest().resolve(p))
        .ok_or_else(|| ServeError::UnknownClip(format!("{clip} has no playable media")))?;
    let mut file = tokio::fs::File::open(&path).await.map_err(|e| ServeError::Internal(e.to_string()))?;
    let len = file.metadata().await.map_err(|e| ServeError::Internal(e.to_string()))?.len();
    let range = headers.get(header::RANGE).and_then(|v| v.to_str().ok());
    let ctype = HeaderValue::from_static(content_type(&path));

    let not_satisfiable = || {
        let mut r = ServeError::RangeNotSatisfiable.into_response();
        r.headers_mut().insert(header::CONTENT_RANGE, HeaderValue::from_str(&format!("bytes */{len}")).unwrap());
        r
    };
    let (status, start, end) = match parse_range(range, len) {
        Ok(Some((a, b))) => (StatusCode::PARTIAL_CONTENT, a, b),
        Ok(None) => (StatusCode::OK, 0, len.saturating_sub(1)),
        Err(_) => return Ok(not_satisfiable()),
    };
    let count = if len == 0 { 0 } else { end - start + 1 };
    let mut buf = vec![0u8; count as usize];
    file.seek(std::io::SeekFrom::Start(start)).await.map_err(|e| ServeError::Internal(e.to_string()))?;
    file.read_exact(&mut buf).await.map_err(|e| ServeError::Internal(e.to_string()))?;

    let mut resp = Response::new(Body::from(buf));
    *resp.status_mut() = status;
    let h = resp.headers_mut();
    h.insert(header::CONTENT_TYPE, ctype);
    h.insert(header::ACCEPT_RANGES, HeaderValue::from_static("bytes"));
    h.insert(header::CONTENT_LENGTH, HeaderValue::from(count));
    if status == StatusCode::PARTIAL_CONTENT {
        h.insert(header::CONTENT_RANGE, HeaderValue::from_str(&format!("bytes {start}-{end}/{len}")).unwrap());
    }
    Ok(resp)
}
