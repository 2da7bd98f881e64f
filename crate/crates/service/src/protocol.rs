//! Wire contract between a session server and its viewers.
//!
//! Control messages are JSON text frames tagged by `type`. Every `snapshot`
//! and `delta` is followed by one binary frame carrying the splats of the
//! nodes it adds:
//!
//! | size | field                                   |
//! |------|-----------------------------------------|
//! | 8    | version, u64                            |
//! | 4    | node count, u32                         |
//! |      | per node: id u64, splat count u32, then |
//! |      | 39-byte splats                          |
//!
//! All integers and floats are little-endian. Node ids are Morton code
//! bits; JSON carries them as decimal strings because they do not fit in
//! a double.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use cutfront::lod::SPLAT_BYTES;
use cutfront::{Camera, Node, Point3, Quaternion, Splat, UnitQuaternion};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Morton code bits of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub u64);

impl Serialize for NodeId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map(NodeId).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Camera pose as sent by a viewer. The orientation quaternion is
/// `[x, y, z, w]` and rotates camera space, which looks down -Z, into the
/// unit cube the cloud was normalized into.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    /// Vertical field of view in degrees.
    pub fov: f64,
    pub viewport: [u32; 2],
}

impl CameraPose {
    pub fn from_camera(cam: &Camera) -> Self {
        let q = cam.orientation.coords;
        CameraPose {
            position: [cam.position.x, cam.position.y, cam.position.z],
            orientation: [q.x, q.y, q.z, q.w],
            fov: cam.vertical_fov_degrees,
            viewport: [cam.viewport_width, cam.viewport_height],
        }
    }

    pub fn to_camera(&self) -> cutfront::Result<Camera> {
        let [x, y, z, w] = self.orientation;
        let norm = (w * w + x * x + y * y + z * z).sqrt();
        if !(norm.is_finite() && norm > 1e-9) {
            return Err(cutfront::Error::Config("camera orientation is not a rotation".into()));
        }
        let q = UnitQuaternion::new_normalize(Quaternion::new(w, x, y, z));
        let eye = Point3::from(self.position);
        // Far plane generous enough for any eye position around the cube.
        let far = (eye.coords.norm() + 2.0) * 4.0;
        Camera::new(eye, q, self.fov, (self.viewport[0], self.viewport[1]), 1e-3, far)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ClientMessage {
    Camera(CameraPose),
    SetThreshold { pixels: f64 },
}

/// A node announced in a snapshot or delta; its splats follow in the
/// binary frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeHeader {
    pub id: NodeId,
    pub splats: u32,
}

impl NodeHeader {
    pub fn of(node: &Node) -> Self {
        NodeHeader {
            id: NodeId(node.code.bits()),
            splats: node.splats.len() as u32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase", rename_all_fields = "camelCase")]
pub enum ServerMessage {
    Progress {
        fraction: f64,
        nodes_per_level: Vec<u64>,
    },
    Snapshot {
        version: u64,
        nodes: Vec<NodeHeader>,
    },
    Delta {
        version: u64,
        add_nodes: Vec<NodeHeader>,
        remove_node_ids: Vec<NodeId>,
    },
    Complete {},
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolError(pub String);

impl fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ProtocolError {}

fn perr(msg: impl Into<String>) -> ProtocolError {
    ProtocolError(msg.into())
}

/// Binary frame for `version` carrying the splats of `nodes`.
pub fn encode_payload(version: u64, nodes: &[Arc<Node>]) -> Vec<u8> {
    let splats: usize = nodes.iter().map(|n| n.splats.len()).sum();
    let mut out = Vec::with_capacity(12 + nodes.len() * 12 + splats * SPLAT_BYTES);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(nodes.len() as u32).to_le_bytes());
    for n in nodes {
        out.extend_from_slice(&n.code.bits().to_le_bytes());
        out.extend_from_slice(&(n.splats.len() as u32).to_le_bytes());
        for s in &n.splats {
            s.write_le(&mut out);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub version: u64,
    pub nodes: Vec<(NodeId, Vec<Splat>)>,
}

pub fn decode_payload(bytes: &[u8]) -> Result<Payload, ProtocolError> {
    let take = |at: &mut usize, n: usize| -> Result<&[u8], ProtocolError> {
        let s = bytes
            .get(*at..*at + n)
            .ok_or_else(|| perr(format!("payload ends at byte {} of a {n}-byte field", *at)))?;
        *at += n;
        Ok(s)
    };
    let mut at = 0;
    let version = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
    let count = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap());
    let mut nodes = Vec::with_capacity(count.min(1 << 16) as usize);
    for _ in 0..count {
        let id = u64::from_le_bytes(take(&mut at, 8)?.try_into().unwrap());
        let n = u32::from_le_bytes(take(&mut at, 4)?.try_into().unwrap()) as usize;
        let raw = take(&mut at, n * SPLAT_BYTES)?;
        nodes.push((NodeId(id), raw.chunks_exact(SPLAT_BYTES).map(Splat::read_le).collect()));
    }
    if at != bytes.len() {
        return Err(perr(format!("{} trailing payload bytes", bytes.len() - at)));
    }
    Ok(Payload { version, nodes })
}

/// A viewer's copy of the render set, rebuilt from the message stream.
#[derive(Debug, Default)]
pub struct RenderSetMirror {
    version: Option<u64>,
    nodes: BTreeMap<NodeId, Vec<Splat>>,
    awaiting: Option<ServerMessage>,
}

impl RenderSetMirror {
    pub fn new() -> Self {
        Self::default()
    }

    /// Version of the last fully applied snapshot or delta.
    pub fn version(&self) -> Option<u64> {
        self.version
    }

    pub fn nodes(&self) -> &BTreeMap<NodeId, Vec<Splat>> {
        &self.nodes
    }

    pub fn ids(&self) -> Vec<NodeId> {
        self.nodes.keys().copied().collect()
    }

    /// Takes a control message. Snapshots and deltas wait for their
    /// payload; other messages are ignored. Returns whether the message
    /// changes the render set.
    pub fn control(&mut self, msg: &ServerMessage) -> Result<bool, ProtocolError> {
        match msg {
            ServerMessage::Snapshot { .. } | ServerMessage::Delta { .. } => {
                if self.awaiting.is_some() {
                    return Err(perr("render-set message arrived before the previous payload"));
                }
                if let ServerMessage::Delta { version, .. } = msg {
                    let expected = self.version.map(|v| v + 1);
                    if expected != Some(*version) {
                        return Err(perr(format!("delta {version} does not follow {:?}", self.version)));
                    }
                }
                self.awaiting = Some(msg.clone());
                Ok(true)
            }
            _ => Ok(false),
        }
    }

    /// Applies the payload of the pending snapshot or delta.
    pub fn payload(&mut self, bytes: &[u8]) -> Result<u64, ProtocolError> {
        let msg = self
            .awaiting
            .take()
            .ok_or_else(|| perr("payload without a render-set message"))?;
        let payload = decode_payload(bytes)?;
        let (version, announced) = match &msg {
            ServerMessage::Snapshot { version, nodes } => (*version, nodes),
            ServerMessage::Delta { version, add_nodes, .. } => (*version, add_nodes),
            _ => unreachable!("only render-set messages are held"),
        };
        if payload.version != version {
            return Err(perr(format!("payload {} for message {version}", payload.version)));
        }
        let got: Vec<NodeHeader> = payload
            .nodes
            .iter()
            .map(|(id, s)| NodeHeader {
                id: *id,
                splats: s.len() as u32,
            })
            .collect();
        if &got != announced {
            return Err(perr(format!("payload {version} does not match its announced nodes")));
        }
        if let ServerMessage::Snapshot { .. } = msg {
            self.nodes.clear();
        }
        if let ServerMessage::Delta { remove_node_ids, .. } = &msg {
            for id in remove_node_ids {
                if self.nodes.remove(id).is_none() {
                    return Err(perr(format!("delta {version} removes unknown node {id}")));
                }
            }
        }
        for (id, splats) in payload.nodes {
            if self.nodes.insert(id, splats).is_some() {
                return Err(perr(format!("delta {version} adds node {id} twice")));
            }
        }
        self.version = Some(version);
        Ok(version)
    }
}
