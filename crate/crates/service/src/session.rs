//! Per-client state: one front over the shared hierarchy, the client's
//! camera, and the render set it was last sent.

use std::collections::BTreeMap;
use std::sync::Arc;

use cutfront::{Camera, Front, FrontConfig, MortonCode, Node, Point3, Progress, SharedHierarchy, Vector3};

use crate::protocol::{encode_payload, ClientMessage, NodeHeader, NodeId, ServerMessage};

/// A frame to send, in order.
#[derive(Debug, Clone, PartialEq)]
pub enum Outgoing {
    Text(ServerMessage),
    Binary(Vec<u8>),
}

/// What a session just emitted, reported to observers together with the
/// render set a direct front query returns at that moment.
#[derive(Debug, Clone)]
pub struct Observation {
    pub session: u64,
    pub version: u64,
    pub camera: Camera,
    pub render_set: Vec<MortonCode>,
    /// Render-set nodes above the hand-off watermark; always zero unless
    /// the builder published too early.
    pub unsafe_nodes: usize,
}

pub type Observer = Arc<dyn Fn(&Observation) + Send + Sync>;

/// Camera used until the client sends one: the whole unit cube in view.
pub fn default_camera() -> Camera {
    Camera::look_at(
        Point3::new(0.5, 0.5, 2.5),
        Point3::new(0.5, 0.5, 0.5),
        Vector3::y(),
        60.0,
        (1280, 720),
    )
    .expect("fixed camera is valid")
}

pub struct Session {
    id: u64,
    shared: Arc<SharedHierarchy>,
    front: Front,
    camera: Camera,
    version: u64,
    sent: BTreeMap<MortonCode, Arc<Node>>,
    snapshot_sent: bool,
    last_progress: Option<(f64, Vec<u64>)>,
    complete_sent: bool,
    failed: bool,
    observer: Option<Observer>,
}

impl Session {
    pub fn new(id: u64, shared: Arc<SharedHierarchy>, front: FrontConfig, observer: Option<Observer>) -> Self {
        Session {
            id,
            front: Front::new(shared.l_max(), front),
            shared,
            camera: default_camera(),
            version: 0,
            sent: BTreeMap::new(),
            snapshot_sent: false,
            last_progress: None,
            complete_sent: false,
            failed: false,
            observer,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn camera(&self) -> &Camera {
        &self.camera
    }

    pub fn front(&self) -> &Front {
        &self.front
    }

    /// True once the build failed and the error was sent; the connection
    /// should close.
    pub fn is_terminated(&self) -> bool {
        self.failed
    }

    /// Handles one text frame. Malformed or unknown messages produce an
    /// error message; the session stays usable.
    pub fn receive(&mut self, text: &str) -> Vec<Outgoing> {
        let msg = match serde_json::from_str::<ClientMessage>(text) {
            Ok(m) => m,
            Err(e) => return vec![error(format!("unrecognized message: {e}"))],
        };
        match msg {
            ClientMessage::Camera(pose) => match pose.to_camera() {
                Ok(cam) => self.camera = cam,
                Err(e) => return vec![error(e.to_string())],
            },
            ClientMessage::SetThreshold { pixels } => {
                if !(pixels.is_finite() && pixels > 0.0) {
                    return vec![error(format!(
                        "threshold must be a positive number of pixels, got {pixels}"
                    ))];
                }
                self.front.set_threshold(pixels);
            }
        }
        Vec::new()
    }

    /// One evaluation step: progress, then the render-set change, then
    /// completion or failure.
    pub fn tick(&mut self) -> Vec<Outgoing> {
        let mut out = Vec::new();
        if self.failed {
            return out;
        }
        let progress = self.shared.progress();
        self.progress_message(&progress, &mut out);
        if let Some(e) = self.shared.failure() {
            self.failed = true;
            out.push(error(e.to_string()));
            return out;
        }
        if let Err(e) = self.front.evaluate(&self.shared, &self.camera) {
            self.failed = true;
            out.push(error(e.to_string()));
            return out;
        }
        let current: BTreeMap<MortonCode, Arc<Node>> = self
            .front
            .render_set(&self.camera)
            .into_iter()
            .map(|n| (n.code, n))
            .collect();
        if !self.snapshot_sent {
            self.snapshot_sent = true;
            self.version += 1;
            let nodes: Vec<Arc<Node>> = current.values().cloned().collect();
            out.push(Outgoing::Text(ServerMessage::Snapshot {
                version: self.version,
                nodes: nodes.iter().map(|n| NodeHeader::of(n)).collect(),
            }));
            out.push(Outgoing::Binary(encode_payload(self.version, &nodes)));
            self.sent = current;
            self.observe();
        } else {
            let added: Vec<Arc<Node>> = current
                .iter()
                .filter(|(c, _)| !self.sent.contains_key(c))
                .map(|(_, n)| Arc::clone(n))
                .collect();
            let removed: Vec<NodeId> = self
                .sent
                .keys()
                .filter(|c| !current.contains_key(c))
                .map(|c| NodeId(c.bits()))
                .collect();
            if !added.is_empty() || !removed.is_empty() {
                self.version += 1;
                out.push(Outgoing::Text(ServerMessage::Delta {
                    version: self.version,
                    add_nodes: added.iter().map(|n| NodeHeader::of(n)).collect(),
                    remove_node_ids: removed,
                }));
                out.push(Outgoing::Binary(encode_payload(self.version, &added)));
                self.sent = current;
                self.observe();
            }
        }
        if progress.complete && !self.complete_sent && self.shared.root().is_some() {
            self.complete_sent = true;
            out.push(Outgoing::Text(ServerMessage::Complete {}));
        }
        out
    }

    fn progress_message(&mut self, p: &Progress, out: &mut Vec<Outgoing>) {
        let key = (p.fraction, p.nodes_per_level.clone());
        if self.last_progress.as_ref() != Some(&key) {
            out.push(Outgoing::Text(ServerMessage::Progress {
                fraction: key.0,
                nodes_per_level: key.1.clone(),
            }));
            self.last_progress = Some(key);
        }
    }

    fn observe(&self) {
        let Some(observer) = &self.observer else { return };
        let render_set: Vec<MortonCode> = self.front.render_set(&self.camera).iter().map(|n| n.code).collect();
        let watermark = self.shared.watermark();
        let unsafe_nodes = render_set.iter().filter(|&&c| !watermark.covers(c)).count();
        observer(&Observation {
            session: self.id,
            version: self.version,
            camera: self.camera,
            render_set,
            unsafe_nodes,
        });
    }
}

fn error(message: String) -> Outgoing {
    Outgoing::Text(ServerMessage::Error { message })
}
