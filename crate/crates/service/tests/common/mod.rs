//! A headless viewer for driving a session server from tests.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use cutfront::Camera;
use cutfront_service::{
    AppState, CameraPose, ClientMessage, NodeId, Observation, RenderSetMirror, ServerMessage, WS_PATH,
};
use futures::{SinkExt, StreamExt};
use tokio::net::TcpStream;
use tokio::time::{timeout_at, Instant};
use tokio_tungstenite::tungstenite::Message;
use tokio_tungstenite::{connect_async, MaybeTlsStream, WebSocketStream};

type Socket = WebSocketStream<MaybeTlsStream<TcpStream>>;

/// Sorted node ids per version.
pub type Versions = BTreeMap<u64, Vec<u64>>;

/// Render sets reported by the server's observer, keyed by session and version.
#[derive(Clone, Default)]
pub struct Observed(pub Arc<Mutex<BTreeMap<u64, Versions>>>);

impl Observed {
    pub fn attach(&self, state: AppState) -> AppState {
        let log = Arc::clone(&self.0);
        state.with_observer(Arc::new(move |o: &Observation| {
            assert_eq!(
                o.unsafe_nodes, 0,
                "session {} streamed nodes before hand-off",
                o.session
            );
            // The front lists nodes by span; the client keys them by id.
            let mut ids: Vec<u64> = o.render_set.iter().map(|c| c.bits()).collect();
            ids.sort_unstable();
            log.lock().unwrap().entry(o.session).or_default().insert(o.version, ids);
        }))
    }

    pub fn sessions(&self) -> BTreeMap<u64, Versions> {
        self.0.lock().unwrap().clone()
    }
}

pub struct ScriptedClient {
    ws: Socket,
    pub mirror: RenderSetMirror,
    /// Render set after each applied version, as the client rebuilt it.
    pub history: BTreeMap<u64, Vec<u64>>,
    /// Every control message in arrival order.
    pub log: Vec<ServerMessage>,
    pub closed: bool,
}

impl ScriptedClient {
    pub async fn connect(addr: SocketAddr) -> Self {
        let (ws, _) = connect_async(format!("ws://{addr}{WS_PATH}")).await.expect("connect");
        ScriptedClient {
            ws,
            mirror: RenderSetMirror::new(),
            history: BTreeMap::new(),
            log: Vec::new(),
            closed: false,
        }
    }

    pub async fn send(&mut self, msg: &ClientMessage) {
        self.send_text(&serde_json::to_string(msg).unwrap()).await;
    }

    pub async fn send_text(&mut self, text: &str) {
        self.ws.send(Message::Text(text.into())).await.expect("send");
    }

    pub async fn look(&mut self, cam: &Camera) {
        self.send(&ClientMessage::Camera(CameraPose::from_camera(cam))).await;
    }

    /// Handles one frame; false once the connection is gone.
    fn apply(&mut self, msg: Message) -> bool {
        match msg {
            Message::Text(t) => {
                let m: ServerMessage = serde_json::from_str(t.as_str()).expect("well-formed server message");
                self.mirror.control(&m).expect("render-set messages in order");
                self.log.push(m);
            }
            Message::Binary(b) => {
                let v = self.mirror.payload(&b).expect("payload matches its message");
                self.history.insert(v, self.mirror.ids().iter().map(|i| i.0).collect());
            }
            Message::Close(_) => {
                self.closed = true;
                return false;
            }
            _ => {}
        }
        true
    }

    /// Reads frames for `d`.
    pub async fn pump(&mut self, d: Duration) {
        let deadline = Instant::now() + d;
        while !self.closed {
            match timeout_at(deadline, self.ws.next()).await {
                Err(_) => return,
                Ok(Some(Ok(m))) => {
                    self.apply(m);
                }
                Ok(_) => self.closed = true,
            }
        }
    }

    /// Reads frames until `done` holds, for at most `limit`.
    pub async fn pump_until(&mut self, limit: Duration, mut done: impl FnMut(&Self) -> bool) -> bool {
        let deadline = Instant::now() + limit;
        while !done(self) {
            if self.closed {
                return false;
            }
            match timeout_at(deadline, self.ws.next()).await {
                Err(_) => return false,
                Ok(Some(Ok(m))) => {
                    self.apply(m);
                }
                Ok(_) => self.closed = true,
            }
        }
        true
    }

    /// Reads frames until no new version arrives for `quiet`.
    pub async fn settle(&mut self, quiet: Duration) {
        loop {
            let v = self.mirror.version();
            self.pump(quiet).await;
            if self.mirror.version() == v || self.closed {
                return;
            }
        }
    }

    pub fn completes(&self) -> usize {
        self.log
            .iter()
            .filter(|m| matches!(m, ServerMessage::Complete {}))
            .count()
    }

    pub fn errors(&self) -> Vec<String> {
        self.log
            .iter()
            .filter_map(|m| match m {
                ServerMessage::Error { message } => Some(message.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.mirror.ids()
    }

    pub async fn close(mut self) {
        let _ = self.ws.close(None).await;
    }
}

/// The server session that agrees with most of `client`'s versions.
///
/// Sessions start from the same default view, so early versions alone can
/// match several of them.
pub fn matching_session(observed: &Observed, client: &ScriptedClient) -> Option<u64> {
    observed
        .sessions()
        .into_iter()
        .map(|(s, versions)| {
            let agreeing = client
                .history
                .iter()
                .filter(|(v, ids)| versions.get(v) == Some(ids))
                .count();
            (agreeing, s)
        })
        .filter(|&(agreeing, _)| agreeing > 0)
        .max()
        .map(|(_, s)| s)
}

/// Versions at which the client's rebuilt set differs from the direct query.
pub fn divergences(observed: &Observed, session: u64, client: &ScriptedClient) -> Vec<u64> {
    let sessions = observed.sessions();
    let server = &sessions[&session];
    let mut bad: Vec<u64> = client
        .history
        .iter()
        .filter(|(v, ids)| server.get(v) != Some(ids))
        .map(|(v, _)| *v)
        .collect();
    // Versions the server emitted that the client never applied.
    let last = client.mirror.version().unwrap_or(0);
    bad.extend(server.keys().filter(|v| **v <= last && !client.history.contains_key(v)));
    bad
}
