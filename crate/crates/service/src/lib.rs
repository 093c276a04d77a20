//! HTTP API of the caster platform: asset, series and view endpoints with NDJSON streaming,
//! admin endpoints and a background maintenance driver. Endpoints are listed in `docs/api.md`.

pub mod config;
pub mod params;
mod routes;
pub mod stream;
pub mod wire;

use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use caster_core::Platform;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub use config::{ConfigError, ServiceConfig};
pub use routes::{decode_batch, now_ns, router, status_of};
pub use stream::{StreamMonitor, StreamSnapshot};

#[derive(Clone)]
pub struct AppState {
    pub platform: Arc<Platform>,
    pub batch_size: usize,
    pub streams: Arc<StreamMonitor>,
}

impl AppState {
    pub fn new(platform: Arc<Platform>, batch_size: usize) -> Self {
        AppState { platform, batch_size: batch_size.max(1), streams: Arc::new(StreamMonitor::default()) }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Run maintenance every `every` until the task is dropped.
pub fn spawn_maintenance(platform: Arc<Platform>, every: Duration) -> tokio::task::JoinHandle<()> {
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(every);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
        tick.tick().await;
        loop {
            tick.tick().await;
            let p = platform.clone();
            match tokio::task::spawn_blocking(move || p.run_maintenance(now_ns())).await {
                Ok(r) => {
                    tracing::info!(buckets = r.buckets_written, deleted = r.points_deleted, "maintenance run");
                    for f in &r.failures {
                        tracing::warn!("maintenance: {f}");
                    }
                }
                Err(e) => tracing::error!("maintenance task failed: {e}"),
            }
        }
    })
}

/// Serve `config` until ctrl-c.
pub async fn serve(config: ServiceConfig) -> Result<(), ServeError> {
    let addr = config.listen_addr()?;
    let platform = Arc::new(config.build_platform()?);
    let listener = TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { addr, source })?;
    tracing::info!("listening on {}", listener.local_addr()?);
    let maintenance = config.maintenance_interval().map(|d| spawn_maintenance(platform.clone(), d));
    let state = AppState::new(platform.clone(), config.batch_size());
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    if let Some(m) = maintenance {
        m.abort();
    }
    if let Err(e) = platform.checkpoint() {
        tracing::warn!("checkpoint on shutdown failed: {e}");
    }
    Ok(())
}

/// A server on its own runtime thread, for tests and embedding.
pub struct BackgroundServer {
    pub addr: SocketAddr,
    pub state: AppState,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    /// Serve `platform` on an ephemeral localhost port.
    pub fn start(platform: Arc<Platform>, batch_size: usize) -> std::io::Result<Self> {
        Self::start_on("127.0.0.1:0".parse().expect("literal"), platform, batch_size, None)
    }

    pub fn start_on(
        addr: SocketAddr,
        platform: Arc<Platform>,
        batch_size: usize,
        maintenance: Option<Duration>,
    ) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = rt.block_on(TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let state = AppState::new(platform.clone(), batch_size);
        let app = router(state.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let m = maintenance.map(|d| spawn_maintenance(platform, d));
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
                if let Some(m) = m {
                    m.abort();
                }
            });
            rt.shutdown_timeout(Duration::from_secs(1));
        });
        Ok(BackgroundServer { addr, state, stop: Some(tx), thread: Some(thread) })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn platform(&self) -> &Arc<Platform> {
        &self.state.platform
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
