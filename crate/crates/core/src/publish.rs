//! Hand-off of finished nodes from the builder to any number of fronts.
//!
//! A node is handed off once it can no longer move: when its grandparent has
//! been created it is neither a cut root nor the child of one. Nodes of one
//! level are created in Morton order, so each level's log is an ascending,
//! append-only list and the published set is always a Morton prefix of the
//! level. Every level has its own lock; readers keep their own cursors.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::cut::Node;
use crate::error::{Error, Result};
use crate::morton::MortonCode;

/// Per-level code at or below which every existing node is published.
#[derive(Debug)]
pub struct SafeWatermark {
    levels: Vec<AtomicU64>,
}

impl SafeWatermark {
    fn new(l_max: u8) -> Self {
        SafeWatermark {
            levels: (0..=l_max).map(|_| AtomicU64::new(0)).collect(),
        }
    }

    /// Highest published code at `level`, if any.
    pub fn get(&self, level: u8) -> Option<MortonCode> {
        match self.levels[level as usize].load(Ordering::Acquire) {
            0 => None,
            bits => Some(MortonCode::from_bits_unchecked(bits)),
        }
    }

    pub fn covers(&self, code: MortonCode) -> bool {
        self.get(code.level()).is_some_and(|w| code <= w)
    }

    fn raise(&self, code: MortonCode) {
        let prev = self.levels[code.level() as usize].fetch_max(code.bits(), Ordering::AcqRel);
        debug_assert!(prev <= code.bits(), "watermark regressed at {code}");
    }
}

/// Build progress as seen by readers.
#[derive(Debug, Clone, PartialEq)]
pub struct Progress {
    /// Fraction of the input incorporated into the cut, in [0, 1].
    pub fraction: f64,
    /// Nodes created so far, indexed by level.
    pub nodes_per_level: Vec<u64>,
    pub complete: bool,
}

#[derive(Debug)]
pub struct SharedHierarchy {
    l_max: u8,
    /// Published nodes per level, ascending.
    levels: Vec<Mutex<Vec<Arc<Node>>>>,
    /// Deepest-level placeholder codes in stream order, one per leaf.
    placeholders: Mutex<Vec<MortonCode>>,
    watermark: SafeWatermark,
    created: Vec<AtomicU64>,
    consumed: AtomicU64,
    total: AtomicU64,
    complete: AtomicBool,
    root: RwLock<Option<Arc<Node>>>,
    failure: Mutex<Option<String>>,
}

impl SharedHierarchy {
    pub fn new(l_max: u8) -> Arc<Self> {
        Arc::new(SharedHierarchy {
            l_max,
            levels: (0..=l_max).map(|_| Mutex::new(Vec::new())).collect(),
            placeholders: Mutex::new(Vec::new()),
            watermark: SafeWatermark::new(l_max),
            created: (0..=l_max).map(|_| AtomicU64::new(0)).collect(),
            consumed: AtomicU64::new(0),
            total: AtomicU64::new(0),
            complete: AtomicBool::new(false),
            root: RwLock::new(None),
            failure: Mutex::new(None),
        })
    }

    pub fn l_max(&self) -> u8 {
        self.l_max
    }

    pub fn watermark(&self) -> &SafeWatermark {
        &self.watermark
    }

    /// Appends placeholder codes; they must continue the ascending sequence.
    pub fn push_placeholders(&self, codes: impl IntoIterator<Item = MortonCode>) {
        let mut log = self.placeholders.lock();
        for code in codes {
            debug_assert!(log.last().map_or(true, |&p| p < code), "placeholder out of order");
            log.push(code);
        }
    }

    /// Publishes nodes of one level, which must continue that level's order.
    pub fn publish(&self, level: u8, nodes: Vec<Arc<Node>>) {
        let Some(last) = nodes.last().map(|n| n.code) else {
            return;
        };
        {
            let mut log = self.levels[level as usize].lock();
            debug_assert!(
                match (log.last(), nodes.first()) {
                    (Some(a), Some(b)) => a.code < b.code,
                    _ => true,
                },
                "publication out of order at level {level}"
            );
            debug_assert!(nodes.iter().all(|n| n.level() == level));
            log.extend(nodes);
        }
        self.watermark.raise(last);
    }

    /// Copies log entries `from..` at `level` into `out`; returns the new cursor.
    pub fn read_level(&self, level: u8, from: usize, out: &mut Vec<Arc<Node>>) -> usize {
        let log = self.levels[level as usize].lock();
        out.extend_from_slice(&log[from.min(log.len())..]);
        log.len()
    }

    pub fn read_placeholders(&self, from: usize, out: &mut Vec<MortonCode>) -> usize {
        let log = self.placeholders.lock();
        out.extend_from_slice(&log[from.min(log.len())..]);
        log.len()
    }

    pub fn published_count(&self, level: u8) -> usize {
        self.levels[level as usize].lock().len()
    }

    pub(crate) fn count_created(&self, level: u8, n: usize) {
        self.created[level as usize].fetch_add(n as u64, Ordering::Relaxed);
    }

    /// Announces how many records the build will consume, for progress.
    pub fn expect_records(&self, total: u64) {
        self.total.store(total, Ordering::Relaxed);
    }

    pub(crate) fn add_consumed(&self, n: u64) {
        self.consumed.fetch_add(n, Ordering::Relaxed);
    }

    pub fn progress(&self) -> Progress {
        let complete = self.is_complete();
        let total = self.total.load(Ordering::Relaxed);
        let consumed = self.consumed.load(Ordering::Relaxed);
        let fraction = if complete {
            1.0
        } else if total == 0 {
            0.0
        } else {
            (consumed as f64 / total as f64).min(1.0)
        };
        Progress {
            fraction,
            nodes_per_level: self.created.iter().map(|c| c.load(Ordering::Relaxed)).collect(),
            complete,
        }
    }

    pub(crate) fn set_root(&self, root: Arc<Node>) {
        *self.root.write() = Some(root);
        self.complete.store(true, Ordering::Release);
    }

    /// Marks the build as failed from outside, e.g. by the reader feeding
    /// it. A [`StreamingBuild`](crate::StreamingBuild) whose input then ends
    /// fails instead of finishing a partial tree.
    pub fn abort(&self, message: impl Into<String>) {
        self.set_failure(message.into());
    }

    /// Records the first failure; later ones are consequences of it.
    pub(crate) fn set_failure(&self, message: String) {
        self.failure.lock().get_or_insert(message);
        self.complete.store(true, Ordering::Release);
    }

    pub fn is_complete(&self) -> bool {
        self.complete.load(Ordering::Acquire)
    }

    /// The finished hierarchy, once the build has completed successfully.
    pub fn root(&self) -> Option<Arc<Node>> {
        self.root.read().clone()
    }

    /// The build's terminal error, if it failed.
    pub fn failure(&self) -> Option<Error> {
        self.failure.lock().clone().map(Error::Worker)
    }

    /// Fails with the build error, if any; `Ok(None)` while still running.
    pub fn outcome(&self) -> Result<Option<Arc<Node>>> {
        match self.failure() {
            Some(e) => Err(e),
            None => Ok(self.root()),
        }
    }
}
