//! HTTP and websocket surface of the relaxation-training engine: session
//! lifecycle, stored records, asset files, dataset export and the live
//! biofeedback frame stream.

mod api;
mod config;
mod driver;
mod error;
mod frames;
pub mod pool;

use std::future::Future;
use std::net::SocketAddr;
use std::sync::Arc;

use asafeplace_core::personalize::{GenerationClient, MockGenerationClient};
use axum::extract::{Request, State};
use axum::http::header;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::serve::ListenerExt;
use axum::Router;
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

pub use api::AppState;
pub use config::ServiceConfig;
pub use driver::{Status, FRAME_BUFFER};
pub use error::GatewayError;
pub use frames::INACTIVE_EVERY;

fn token_of(req: &Request) -> Option<&str> {
    let bearer = req
        .headers()
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    bearer.or_else(|| {
        req.uri()
            .query()?
            .split('&')
            .find_map(|kv| kv.strip_prefix("token="))
    })
}

fn same(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(expected) = &state.cfg.auth_token {
        if !token_of(&req).is_some_and(|t| same(t.as_bytes(), expected.as_bytes())) {
            return GatewayError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: Arc<AppState>) -> Router {
    let guarded = Router::new()
        .route("/sessions", post(api::create).get(api::list))
        .route("/sessions/{id}", get(api::get))
        .route("/sessions/{id}/start", post(api::start))
        .route("/sessions/{id}/advance", post(api::advance))
        .route("/sessions/{id}/abort", post(api::abort))
        .route("/sessions/{id}/events", post(api::log_event))
        .route("/sessions/{id}/live", get(api::live))
        .route("/sessions/{id}/assets/{kind}", get(api::asset))
        .route("/sessions/{id}/frames", get(frames::frames))
        .route("/export.csv", get(api::export_csv))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token));
    Router::new()
        .route("/health", get(api::health))
        .merge(guarded)
        .fallback(|| async { GatewayError::NotFound("route".into()) })
        .with_state(state)
}

/// A running service. Dropping it does not stop the server; call
/// [`Server::shutdown`].
pub struct Server {
    pub addr: SocketAddr,
    pub state: Arc<AppState>,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<std::io::Result<()>>,
}

impl Server {
    /// Binds and starts serving in the background with the mock generator.
    pub async fn spawn(cfg: ServiceConfig) -> Result<Self, GatewayError> {
        Self::spawn_with(cfg, Arc::new(MockGenerationClient::default())).await
    }

    pub async fn spawn_with(
        mut cfg: ServiceConfig,
        generator: Arc<dyn GenerationClient>,
    ) -> Result<Self, GatewayError> {
        cfg.prepare()?;
        let listener = TcpListener::bind((cfg.host.as_str(), cfg.http_port))
            .await
            .map_err(|e| {
                GatewayError::Config(format!("cannot bind {}:{}: {e}", cfg.host, cfg.http_port))
            })?;
        let addr = listener.local_addr()?;
        let send_buffer = cfg.send_buffer_bytes;
        let state = Arc::new(AppState::new(cfg, generator)?);
        let (stop, stopped) = oneshot::channel::<()>();
        let app = router(state.clone());
        let task = tokio::spawn(async move {
            let listener = listener.tap_io(move |tcp| {
                if let Some(n) = send_buffer {
                    if let Err(e) = socket2::SockRef::from(&*tcp).set_send_buffer_size(n) {
                        tracing::warn!(error = %e, "cannot set send buffer");
                    }
                }
                let _ = tcp.set_nodelay(true);
            });
            axum::serve(listener, app)
                .with_graceful_shutdown(async {
                    let _ = stopped.await;
                })
                .await
        });
        tracing::info!(%addr, "gateway listening");
        Ok(Self {
            addr,
            state,
            stop: Some(stop),
            task,
        })
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{path}", self.addr)
    }

    /// Serves until `signal` resolves, then shuts down.
    pub async fn run_until(self, signal: impl Future<Output = ()>) -> Result<(), GatewayError> {
        signal.await;
        self.shutdown().await
    }

    pub async fn shutdown(mut self) -> Result<(), GatewayError> {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        let state = self.state.clone();
        tokio::task::spawn_blocking(move || state.shutdown())
            .await
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        self.task
            .await
            .map_err(|e| GatewayError::Config(e.to_string()))??;
        Ok(())
    }
}
