use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Query as UrlQuery, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use luminocity::assoc::{query_bbox, AssocError};
use luminocity::render::{default_stopwords, top_terms};
use luminocity::{BBox, IngestStats, Query, SchemeConfig, TweetRecord};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::{lock, AppState, ServiceError};

type Shared = Arc<AppState>;

pub(crate) fn router(state: Shared) -> Router {
    Router::new()
        .route("/api/ingest", post(ingest))
        .route("/api/tweets", get(tweets))
        .route("/api/heightmap", get(heightmap))
        .route("/api/scheme", get(get_scheme).put(put_scheme))
        .route("/api/topics", get(topics))
        .route("/api/stats", get(stats))
        .route("/api/frames", get(frames))
        .with_state(state)
}

struct ApiError(StatusCode, String);

impl ApiError {
    fn bad_request(msg: impl ToString) -> Self {
        Self(StatusCode::BAD_REQUEST, msg.to_string())
    }

    fn internal(msg: impl ToString) -> Self {
        Self(StatusCode::INTERNAL_SERVER_ERROR, msg.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(json!({ "error": self.1 }))).into_response()
    }
}

impl From<AssocError> for ApiError {
    fn from(e: AssocError) -> Self {
        match e {
            AssocError::Integrity { .. } => Self::internal(e),
            _ => Self::bad_request(e),
        }
    }
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        Self::internal(e)
    }
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(ApiError::internal)?
}

async fn ingest(State(st): State<Shared>, body: String) -> Result<Json<IngestStats>, ApiError> {
    let stats = blocking(move || Ok(st.ingest(body.lines())?)).await?;
    Ok(Json(stats))
}

#[derive(Debug, Deserialize)]
struct TweetParams {
    lat0: Option<f64>,
    lat1: Option<f64>,
    lon0: Option<f64>,
    lon1: Option<f64>,
    from: Option<i64>,
    to: Option<i64>,
    q: Option<String>,
}

/// Missing box bounds default to the grid box.
async fn tweets(State(st): State<Shared>, UrlQuery(p): UrlQuery<TweetParams>) -> Result<Json<Vec<TweetRecord>>, ApiError> {
    let g = st.cfg.grid.bbox;
    let bbox = BBox::new(
        p.lat0.unwrap_or(g.lat_min),
        p.lat1.unwrap_or(g.lat_max),
        p.lon0.unwrap_or(g.lon_min),
        p.lon1.unwrap_or(g.lon_max),
    )
    .map_err(ApiError::bad_request)?;
    let mut query = Query::bbox(bbox).between(p.from, p.to);
    if let Some(q) = p.q {
        query = query.keyword(q);
    }
    let recs = blocking(move || Ok(query_bbox(&st.store.snapshot(), &query, st.cfg.key_format)?)).await?;
    Ok(Json(recs))
}

#[derive(Serialize)]
struct HeightmapBody<'a> {
    nrows: usize,
    ncols: usize,
    bbox: BBox,
    heights: &'a [f64],
}

async fn heightmap(State(st): State<Shared>) -> Response {
    let hg = &st.heightmap;
    Json(HeightmapBody { nrows: hg.spec.nrows, ncols: hg.spec.ncols, bbox: hg.spec.bbox, heights: &hg.heights })
        .into_response()
}

async fn get_scheme(State(st): State<Shared>) -> Json<SchemeConfig> {
    Json((*st.scheme()).clone())
}

async fn put_scheme(State(st): State<Shared>, body: Bytes) -> Result<Json<SchemeConfig>, ApiError> {
    let scheme: SchemeConfig = serde_json::from_slice(&body).map_err(ApiError::bad_request)?;
    scheme.validate().map_err(ApiError::bad_request)?;
    {
        let _render = st.render.lock().await;
        st.set_scheme(scheme.clone());
    }
    st.wake.notify_one();
    Ok(Json(scheme))
}

#[derive(Debug, Deserialize)]
struct TopicParams {
    k: Option<usize>,
}

const DEFAULT_TOPICS: usize = 3;

/// Per-cell top terms (row-major) for the active scheme's time window.
async fn topics(
    State(st): State<Shared>,
    UrlQuery(p): UrlQuery<TopicParams>,
) -> Result<Json<Vec<Vec<(String, u32)>>>, ApiError> {
    let k = p.k.unwrap_or(DEFAULT_TOPICS);
    let scheme = st.scheme();
    let terms = blocking(move || {
        let recs = st.window(scheme.t0, scheme.t1)?;
        Ok(top_terms(&recs, &st.cfg.grid, k, &default_stopwords()))
    })
    .await?;
    Ok(Json(terms))
}

#[derive(Serialize)]
struct StatsBody {
    #[serde(flatten)]
    ingest: IngestStats,
    records_stored: usize,
    segments: usize,
}

async fn stats(State(st): State<Shared>) -> Result<Json<StatsBody>, ApiError> {
    let body = blocking(move || {
        Ok(StatsBody {
            ingest: *lock(&st.stats),
            records_stored: st.store.record_count(),
            segments: st.store.engine().segment_count(),
        })
    })
    .await?;
    Ok(Json(body))
}

async fn frames(ws: WebSocketUpgrade, State(st): State<Shared>) -> Response {
    // subscribe before the upgrade completes so no frame rendered after this
    // request is missed
    let rx = st.frames.subscribe();
    st.wake.notify_one();
    let shutdown = st.shutdown.clone();
    ws.on_upgrade(move |socket| stream_frames(socket, rx, shutdown))
}

async fn stream_frames(
    mut socket: WebSocket,
    mut rx: tokio::sync::broadcast::Receiver<axum::extract::ws::Utf8Bytes>,
    mut shutdown: tokio::sync::watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text)).await.is_err() {
                        break;
                    }
                }
                Err(RecvError::Lagged(n)) => log::debug!("subscriber skipped {n} frames"),
                Err(RecvError::Closed) => break,
            },
            incoming = socket.recv() => match incoming {
                None | Some(Err(_)) | Some(Ok(Message::Close(_))) => break,
                Some(Ok(_)) => {}
            },
            _ = shutdown.changed() => break,
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
