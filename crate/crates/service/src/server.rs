//! Websocket endpoint running one [`Session`] per connection.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::Router;
use cutfront::{FrontConfig, SharedHierarchy};
use futures::{SinkExt, StreamExt};
use log::{debug, info, warn};
use tokio::net::TcpListener;
use tokio::time::{interval, MissedTickBehavior};

use crate::session::{Observer, Outgoing, Session};

/// Path the websocket is served on.
pub const WS_PATH: &str = "/ws";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ServiceConfig {
    /// Front evaluations per second and client.
    pub tick_hz: f64,
    /// Initial projected-size threshold for new sessions.
    pub front: FrontConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            tick_hz: 30.0,
            front: FrontConfig::default(),
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    shared: Arc<SharedHierarchy>,
    config: ServiceConfig,
    observer: Option<Observer>,
    next_session: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(shared: Arc<SharedHierarchy>, config: ServiceConfig) -> Self {
        AppState {
            shared,
            config,
            observer: None,
            next_session: Arc::new(AtomicU64::new(1)),
        }
    }

    /// Reports every emitted render-set version together with a direct
    /// front query, for tests and diagnostics.
    pub fn with_observer(mut self, observer: Observer) -> Self {
        self.observer = Some(observer);
        self
    }
}

pub fn router(state: AppState) -> Router {
    Router::new().route(WS_PATH, get(upgrade)).with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: TcpListener, state: AppState) -> std::io::Result<()> {
    info!("serving sessions on ws://{}{WS_PATH}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

/// Binds `addr` and serves in the background; returns the bound address.
pub async fn spawn_server(addr: SocketAddr, state: AppState) -> std::io::Result<SocketAddr> {
    let listener = TcpListener::bind(addr).await?;
    let local = listener.local_addr()?;
    tokio::spawn(async move {
        if let Err(e) = serve(listener, state).await {
            warn!("server stopped: {e}");
        }
    });
    Ok(local)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, state))
}

async fn run_session(socket: WebSocket, state: AppState) {
    let id = state.next_session.fetch_add(1, Ordering::Relaxed);
    let mut session = Session::new(
        id,
        Arc::clone(&state.shared),
        state.config.front,
        state.observer.clone(),
    );
    let (mut tx, mut rx) = socket.split();
    let period = Duration::from_secs_f64(1.0 / state.config.tick_hz.max(0.1));
    let mut ticks = interval(period);
    ticks.set_missed_tick_behavior(MissedTickBehavior::Delay);
    debug!("session {id} opened");
    loop {
        let out = tokio::select! {
            incoming = rx.next() => match incoming {
                Some(Ok(Message::Text(text))) => session.receive(text.as_str()),
                Some(Ok(Message::Binary(_))) => session.receive("binary frames are not accepted"),
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => continue,
                Some(Err(e)) => {
                    debug!("session {id}: {e}");
                    break;
                }
            },
            _ = ticks.tick() => session.tick(),
        };
        for frame in out {
            let msg = match frame {
                Outgoing::Text(m) => Message::Text(serde_json::to_string(&m).expect("messages serialize").into()),
                Outgoing::Binary(b) => Message::Binary(b.into()),
            };
            if tx.send(msg).await.is_err() {
                debug!("session {id} closed by the client");
                return;
            }
        }
        if session.is_terminated() {
            let _ = tx.send(Message::Close(None)).await;
            break;
        }
    }
    debug!("session {id} ended at version {}", session.version());
}
