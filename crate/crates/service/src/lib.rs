//! Session server: builds a hierarchy from a point source and streams each
//! connected viewer the render set of its own front.
//!
//! Viewers connect over a websocket, send camera poses and thresholds as
//! JSON, and receive snapshots and deltas as JSON followed by binary splat
//! payloads; see [`protocol`].

pub mod pipeline;
pub mod protocol;
pub mod server;
pub mod session;

pub use pipeline::{Pipeline, PipelineConfig, Source};
pub use protocol::{CameraPose, ClientMessage, NodeHeader, NodeId, RenderSetMirror, ServerMessage};
pub use server::{router, serve, spawn_server, AppState, ServiceConfig, WS_PATH};
pub use session::{default_camera, Observation, Observer, Outgoing, Session};
