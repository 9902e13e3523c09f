//! HTTP/WebSocket front end over a data directory: feed ingestion, record
//! queries, heightmap and scheme access, and a render loop that broadcasts
//! the active scheme's frame to every WebSocket subscriber.
//!
//! Frames go out through a broadcast channel holding [`FRAME_QUEUE`]
//! messages. A subscriber that falls behind loses the oldest frames and
//! resumes with the newest, so sequence numbers it sees only increase.

mod api;
pub mod config;
pub mod data;
pub mod frames;

use std::io::{BufRead, BufReader};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::extract::ws::Utf8Bytes;
use luminocity::assoc::AssocError;
use luminocity::render::RenderError;
use luminocity::store::StoreError;
use luminocity::{FrameBuffer, HeightGrid, IngestStats, SchemeConfig, SchemeMode, TableSet, TweetRecord};
use thiserror::Error;
use tokio::sync::{broadcast, watch, Notify};
use tokio::task::JoinHandle;

pub use config::ServerConfig;
pub use data::DataDir;
pub use frames::{render_scheme, window_records, FrameMessage};

/// Frames buffered per subscriber before the oldest are dropped.
pub const FRAME_QUEUE: usize = 4;

const FEED_POLL: Duration = Duration::from_millis(200);
const FEED_BATCH: usize = 1000;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error("store: {0}")]
    Store(#[from] StoreError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("bad input: {0}")]
    Input(String),
    #[error("heightmap: {0}")]
    Heightmap(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

struct CachedWindow {
    generation: u64,
    t0: Option<i64>,
    t1: Option<i64>,
    recs: Arc<Vec<TweetRecord>>,
}

#[derive(Default)]
struct RenderState {
    seq: u64,
    tick: u64,
}

pub(crate) struct AppState {
    cfg: ServerConfig,
    data: DataDir,
    store: Arc<TableSet>,
    heightmap: HeightGrid,
    scheme: RwLock<Arc<SchemeConfig>>,
    /// Held while a frame is rendered and sent, and while the scheme is
    /// swapped, so no frame straddles a scheme change.
    render: tokio::sync::Mutex<RenderState>,
    stats: Mutex<IngestStats>,
    ingest_lock: Mutex<()>,
    generation: AtomicU64,
    cache: Mutex<Option<CachedWindow>>,
    frames: broadcast::Sender<Utf8Bytes>,
    wake: Notify,
    shutdown: watch::Receiver<bool>,
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl AppState {
    fn scheme(&self) -> Arc<SchemeConfig> {
        Arc::clone(&self.scheme.read().unwrap_or_else(|e| e.into_inner()))
    }

    fn set_scheme(&self, scheme: SchemeConfig) {
        *self.scheme.write().unwrap_or_else(|e| e.into_inner()) = Arc::new(scheme);
    }

    fn ingest<L: AsRef<str>>(&self, lines: impl IntoIterator<Item = L>) -> Result<IngestStats, ServiceError> {
        let _guard = lock(&self.ingest_lock);
        let stats = self.data.ingest_lines(&self.store, lines)?;
        lock(&self.stats).merge(&stats);
        if stats.records_kept > 0 {
            self.generation.fetch_add(1, Ordering::SeqCst);
            self.wake.notify_one();
        }
        Ok(stats)
    }

    /// Window records, recomputed only after an ingest or a window change.
    fn window(&self, t0: Option<i64>, t1: Option<i64>) -> Result<Arc<Vec<TweetRecord>>, AssocError> {
        let generation = self.generation.load(Ordering::SeqCst);
        if let Some(c) = lock(&self.cache).as_ref() {
            if c.generation == generation && c.t0 == t0 && c.t1 == t1 {
                return Ok(Arc::clone(&c.recs));
            }
        }
        let recs = Arc::new(window_records(&self.store.snapshot(), &self.cfg.grid, self.cfg.key_format, t0, t1)?);
        *lock(&self.cache) = Some(CachedWindow { generation, t0, t1, recs: Arc::clone(&recs) });
        Ok(recs)
    }

    fn render_current(&self, tick: u64) -> Result<FrameBuffer, String> {
        let scheme = self.scheme();
        let recs = match scheme.mode {
            SchemeMode::Height => Arc::new(Vec::new()),
            _ => self.window(scheme.t0, scheme.t1).map_err(|e| e.to_string())?,
        };
        render_scheme(&scheme, &self.heightmap, &recs, tick).map_err(|e: RenderError| e.to_string())
    }
}

async fn render_loop(state: Arc<AppState>, mut shutdown: watch::Receiver<bool>) {
    let mut interval = tokio::time::interval(Duration::from_millis(state.cfg.frame_period_ms));
    interval.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
    loop {
        tokio::select! {
            _ = interval.tick() => {}
            _ = state.wake.notified() => {}
            _ = shutdown.changed() => break,
        }
        if state.frames.receiver_count() == 0 {
            continue;
        }
        let mut rs = state.render.lock().await;
        let tick = rs.tick;
        let st = Arc::clone(&state);
        match tokio::task::spawn_blocking(move || st.render_current(tick)).await {
            Ok(Ok(mut frame)) => {
                rs.tick += 1;
                rs.seq += 1;
                frame.seq = rs.seq;
                match serde_json::to_string(&FrameMessage::encode(&frame)) {
                    Ok(text) => {
                        // no subscribers left is fine
                        let _ = state.frames.send(text.into());
                    }
                    Err(e) => log::error!("encoding frame: {e}"),
                }
            }
            Ok(Err(e)) => log::warn!("render failed: {e}"),
            Err(e) => log::error!("render task: {e}"),
        }
    }
}

/// Follows a growing feed file, ingesting complete lines as they appear.
fn follow_feed(state: Arc<AppState>, path: PathBuf, stop: Arc<AtomicBool>) {
    let file = loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match std::fs::File::open(&path) {
            Ok(f) => break f,
            Err(_) => std::thread::sleep(FEED_POLL),
        }
    };
    log::info!("following feed {}", path.display());
    let mut reader = BufReader::new(file);
    let mut partial = String::new();
    while !stop.load(Ordering::SeqCst) {
        let mut batch = Vec::new();
        while batch.len() < FEED_BATCH {
            match reader.read_line(&mut partial) {
                Ok(0) => break,
                Ok(_) if partial.ends_with('\n') => {
                    partial.pop();
                    batch.push(std::mem::take(&mut partial));
                }
                Ok(_) => break,
                Err(e) => {
                    log::warn!("reading feed {}: {e}", path.display());
                    partial.clear();
                    break;
                }
            }
        }
        if batch.is_empty() {
            std::thread::sleep(FEED_POLL);
            continue;
        }
        if let Err(e) = state.ingest(&batch) {
            log::error!("feed ingest: {e}");
        }
    }
}

/// A running server. Dropping it without [`shutdown`](Self::shutdown)
/// leaves the tasks running until the runtime stops.
pub struct Server {
    addr: SocketAddr,
    state: Arc<AppState>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
    feed: Option<(Arc<AtomicBool>, std::thread::JoinHandle<()>)>,
}

impl Server {
    /// Opens the data directory, binds the listener and starts the render
    /// loop (and the feed follower when configured).
    pub async fn start(cfg: ServerConfig) -> Result<Self, ServiceError> {
        cfg.validate()?;
        std::fs::create_dir_all(&cfg.data_dir)?;
        let data = DataDir::new(&cfg.data_dir);
        let (store, heightmap) = {
            let (data, fmt, grid) = (data.clone(), cfg.key_format, cfg.grid);
            tokio::task::spawn_blocking(move || -> Result<_, ServiceError> {
                let store = data.open_store(fmt)?;
                let hg = data.load_heightmap(&grid)?.unwrap_or_else(|| HeightGrid::zeros(grid));
                Ok((store, hg))
            })
            .await
            .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??
        };
        let listener = tokio::net::TcpListener::bind(cfg.listen)
            .await
            .map_err(|source| ServiceError::Bind { addr: cfg.listen, source })?;
        let addr = listener.local_addr()?;

        let (shutdown_tx, shutdown_rx) = watch::channel(false);
        let (frames, _) = broadcast::channel(FRAME_QUEUE);
        let feed_path = cfg.feed.clone();
        let state = Arc::new(AppState {
            cfg,
            data,
            store: Arc::new(store),
            heightmap,
            scheme: RwLock::new(Arc::new(SchemeConfig::default())),
            render: tokio::sync::Mutex::new(RenderState::default()),
            stats: Mutex::new(IngestStats::default()),
            ingest_lock: Mutex::new(()),
            generation: AtomicU64::new(0),
            cache: Mutex::new(None),
            frames,
            wake: Notify::new(),
            shutdown: shutdown_rx.clone(),
        });

        let app = api::router(Arc::clone(&state));
        let mut stop = shutdown_rx.clone();
        let serve = tokio::spawn(async move {
            let shutdown = async move {
                let _ = stop.changed().await;
            };
            if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                log::error!("server: {e}");
            }
        });
        let render = tokio::spawn(render_loop(Arc::clone(&state), shutdown_rx));
        let feed = feed_path.map(|path| {
            let stop = Arc::new(AtomicBool::new(false));
            let (st, flag) = (Arc::clone(&state), Arc::clone(&stop));
            (stop, std::thread::spawn(move || follow_feed(st, path, flag)))
        });
        log::info!("listening on {addr}");
        Ok(Self { addr, state, shutdown: shutdown_tx, tasks: vec![serve, render], feed })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// The open store, for callers that need library-level access while the
    /// server runs.
    pub fn store(&self) -> &TableSet {
        &self.state.store
    }

    pub fn heightmap(&self) -> &HeightGrid {
        &self.state.heightmap
    }

    pub fn config(&self) -> &ServerConfig {
        &self.state.cfg
    }

    /// Stops accepting requests, closes WebSocket streams and waits for the
    /// background tasks.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        for t in self.tasks {
            let _ = t.await;
        }
        if let Some((stop, handle)) = self.feed {
            stop.store(true, Ordering::SeqCst);
            let _ = tokio::task::spawn_blocking(move || handle.join()).await;
        }
        if let Err(e) = self.state.store.sync() {
            log::warn!("final sync: {e}");
        }
    }
}
