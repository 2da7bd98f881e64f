//! The rendering front over a hierarchy that is still being built.
//!
//! Every leaf enters the front first as a placeholder at the deepest level,
//! appended in stream order. Once the builder hands the leaf off, it waits in
//! the pending list of its level until an evaluation at that level swaps it in
//! for its placeholder. Because placeholders and pending leaves share Morton
//! order, each swap only compares a placeholder with the head of one list.
//! Prune and branch then adapt the resolution to the camera, touching only
//! nodes the builder has handed off.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use crate::camera::Camera;
use crate::cut::{ok, InvariantCheck, Node};
use crate::error::{Error, Result};
use crate::lod;
use crate::morton::MortonCode;
use crate::publish::SharedHierarchy;

/// Default number of entries visited per segmented evaluation.
pub const DEFAULT_SEGMENT_BUDGET: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum FrontEntry {
    /// Deepest-level stand-in for a leaf that has not been substituted yet.
    Placeholder(MortonCode),
    Node(Arc<Node>),
}

impl FrontEntry {
    pub fn code(&self) -> MortonCode {
        match self {
            FrontEntry::Placeholder(c) => *c,
            FrontEntry::Node(n) => n.code,
        }
    }

    pub fn is_placeholder(&self) -> bool {
        matches!(self, FrontEntry::Placeholder(_))
    }

    pub fn node(&self) -> Option<&Arc<Node>> {
        match self {
            FrontEntry::Placeholder(_) => None,
            FrontEntry::Node(n) => Some(n),
        }
    }
}

#[derive(Debug, Clone)]
struct PendingLeaf {
    node: Arc<Node>,
    /// Evaluation during which the leaf became pending (1-based).
    registered: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontConfig {
    /// Nodes projecting larger than this are refined; a sibling group is
    /// coarsened when its parent projects smaller.
    pub threshold_pixels: f64,
    /// Entries visited per evaluation; 0 visits the whole front every time.
    pub segment_budget: usize,
}

impl Default for FrontConfig {
    fn default() -> Self {
        FrontConfig {
            threshold_pixels: 20.0,
            segment_budget: DEFAULT_SEGMENT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FrontStats {
    pub evaluations: u64,
    pub substitutions: u64,
    pub prunes: u64,
    pub branches: u64,
    /// Largest number of evaluations a leaf spent registered, counting the
    /// evaluation that registered it and the one that substituted it.
    pub max_latency: u64,
    /// `latency_histogram[k]` counts substitutions with latency `k`.
    pub latency_histogram: Vec<u64>,
}

/// What one evaluation did.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Evaluation {
    /// Level whose pending leaves were eligible for substitution.
    pub level: Option<u8>,
    /// Whether the evaluation visited every entry.
    pub full: bool,
    pub substituted: usize,
    pub pruned: usize,
    pub branched: usize,
    /// Pending leaves left at `level` afterwards.
    pub pending_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrontReport {
    pub checks: [InvariantCheck; 3],
}

impl FrontReport {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn first_failure(&self) -> Option<&InvariantCheck> {
        self.checks.iter().find(|c| !c.holds)
    }
}

impl fmt::Display for FrontReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            match c.witness {
                Some(w) => writeln!(f, "{}: FAILED at {w}", c.name)?,
                None => writeln!(f, "{}: {}", c.name, if c.holds { "ok" } else { "FAILED" })?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Front {
    l_max: u8,
    config: FrontConfig,
    entries: Vec<FrontEntry>,
    pending: Vec<VecDeque<PendingLeaf>>,
    cursor: usize,
    /// This front's view of the handed-off nodes, ascending per level.
    safe: Vec<Vec<Arc<Node>>>,
    level_cursors: Vec<usize>,
    placeholder_cursor: usize,
    stats: FrontStats,
}

impl Front {
    pub fn new(l_max: u8, config: FrontConfig) -> Self {
        let levels = l_max as usize + 1;
        Front {
            l_max,
            config,
            entries: Vec::new(),
            pending: vec![VecDeque::new(); levels],
            cursor: 0,
            safe: vec![Vec::new(); levels],
            level_cursors: vec![0; levels],
            placeholder_cursor: 0,
            stats: FrontStats::default(),
        }
    }

    pub fn l_max(&self) -> u8 {
        self.l_max
    }

    pub fn config(&self) -> &FrontConfig {
        &self.config
    }

    pub fn set_threshold(&mut self, pixels: f64) {
        self.config.threshold_pixels = pixels;
    }

    pub fn entries(&self) -> &[FrontEntry] {
        &self.entries
    }

    pub fn stats(&self) -> &FrontStats {
        &self.stats
    }

    pub fn pending_len(&self, level: u8) -> usize {
        self.pending[level as usize].len()
    }

    pub fn pending_total(&self) -> usize {
        self.pending.iter().map(VecDeque::len).sum()
    }

    /// Appends a deepest-level placeholder after the current tail.
    pub fn insert_placeholder(&mut self, code: MortonCode) -> Result<()> {
        if code.level() != self.l_max {
            return Err(Error::domain(format!(
                "placeholder {code} is not at level {}",
                self.l_max
            )));
        }
        if let Some(last) = self.entries.last() {
            let tail = last.code().span(self.l_max)?;
            if code <= tail {
                return Err(Error::FrontCorruption { code, tail });
            }
        }
        self.entries.push(FrontEntry::Placeholder(code));
        Ok(())
    }

    /// Queues a handed-off leaf for substitution at its own level.
    pub fn register_leaf(&mut self, leaf: Arc<Node>) {
        let list = &mut self.pending[leaf.level() as usize];
        debug_assert!(list.back().map_or(true, |p| p.node.code < leaf.code));
        list.push_back(PendingLeaf {
            node: leaf,
            registered: self.stats.evaluations + 1,
        });
    }

    /// Records handed-off nodes of one level; leaves also become pending.
    pub fn accept_safe(&mut self, level: u8, nodes: &[Arc<Node>]) {
        for n in nodes {
            if n.is_leaf() {
                self.register_leaf(Arc::clone(n));
            }
        }
        self.safe[level as usize].extend_from_slice(nodes);
    }

    /// Pulls everything the builder handed off since the last call.
    ///
    /// Leaves are read before placeholders: a leaf's placeholder is logged
    /// before the leaf itself, so every leaf seen here finds its placeholder
    /// in the same call.
    pub fn sync(&mut self, shared: &SharedHierarchy) -> Result<()> {
        let mut fresh = Vec::new();
        for level in 0..=self.l_max {
            fresh.clear();
            let from = self.level_cursors[level as usize];
            self.level_cursors[level as usize] = shared.read_level(level, from, &mut fresh);
            self.accept_safe(level, &fresh);
        }
        let mut codes = Vec::new();
        self.placeholder_cursor = shared.read_placeholders(self.placeholder_cursor, &mut codes);
        for code in codes {
            self.insert_placeholder(code)?;
        }
        Ok(())
    }

    /// Level to substitute next: the one with the most pending leaves,
    /// deeper levels winning ties.
    ///
    /// A level whose oldest leaf would otherwise wait longer than
    /// `l_max - 1` evaluations takes precedence, oldest first.
    pub fn choose_substitution_level(&self) -> Option<u8> {
        let next = self.stats.evaluations + 1;
        let deadline = (self.l_max as u64).saturating_sub(2);
        // max_by_key keeps the last maximum, so ascending levels let the
        // deeper level win ties.
        let overdue = (0..=self.l_max)
            .filter_map(|l| self.pending[l as usize].front().map(|p| (l, next - p.registered)))
            .filter(|&(_, age)| age >= deadline)
            .max_by_key(|&(_, age)| age);
        if let Some((l, _)) = overdue {
            return Some(l);
        }
        (0..=self.l_max)
            .map(|l| (l, self.pending[l as usize].len()))
            .filter(|&(_, n)| n > 0)
            .max_by_key(|&(_, n)| n)
            .map(|(l, _)| l)
    }

    /// Syncs with the builder, then evaluates one segment of the front.
    pub fn evaluate(&mut self, shared: &SharedHierarchy, cam: &Camera) -> Result<Evaluation> {
        self.sync(shared)?;
        Ok(self.evaluate_local(cam, self.config.segment_budget))
    }

    /// Syncs, then visits every entry.
    pub fn evaluate_full(&mut self, shared: &SharedHierarchy, cam: &Camera) -> Result<Evaluation> {
        self.sync(shared)?;
        Ok(self.evaluate_local(cam, 0))
    }

    /// Substitution, prune and branch over at most `budget` entries starting
    /// at the segment cursor; `budget == 0` visits the whole front.
    pub fn evaluate_local(&mut self, cam: &Camera, budget: usize) -> Evaluation {
        let level = self.choose_substitution_level();
        self.stats.evaluations += 1;
        let n = self.entries.len();
        let start = if self.cursor >= n { 0 } else { self.cursor };
        let end = if budget == 0 { n } else { n.min(start + budget) };
        let full = start == 0 && end == n;
        let mut out = Vec::with_capacity(end - start);
        let mut eval = Evaluation {
            level,
            full,
            ..Evaluation::default()
        };
        let mut i = start;
        while i < end {
            match &self.entries[i] {
                &FrontEntry::Placeholder(code) => {
                    let entry = level
                        .and_then(|l| self.substitute(code, l))
                        .map(FrontEntry::Node)
                        .unwrap_or(FrontEntry::Placeholder(code));
                    eval.substituted += !entry.is_placeholder() as usize;
                    out.push(entry);
                    i += 1;
                }
                FrontEntry::Node(node) => {
                    if let Some(parent) = self.prunable(i, end, cam) {
                        i += parent.children.len();
                        out.push(FrontEntry::Node(parent));
                        eval.pruned += 1;
                    } else if self.branchable(node, cam) {
                        out.extend(node.children.iter().cloned().map(FrontEntry::Node));
                        eval.branched += 1;
                        i += 1;
                    } else {
                        out.push(FrontEntry::Node(Arc::clone(node)));
                        i += 1;
                    }
                }
            }
        }
        let written = out.len();
        self.entries.splice(start..end, out);
        self.cursor = if full || start + written >= self.entries.len() {
            0
        } else {
            start + written
        };
        self.stats.prunes += eval.pruned as u64;
        self.stats.branches += eval.branched as u64;
        eval.pending_after = level.map_or(0, |l| self.pending_len(l));
        eval
    }

    /// Pops the pending head at `level` if `placeholder` lies in its cell.
    fn substitute(&mut self, placeholder: MortonCode, level: u8) -> Option<Arc<Node>> {
        let head = self.pending[level as usize].front()?;
        if placeholder.level() < level || placeholder.ancestor_at(level).ok()? != head.node.code {
            return None;
        }
        let head = self.pending[level as usize].pop_front()?;
        let latency = self.stats.evaluations - head.registered + 1;
        self.stats.substitutions += 1;
        self.stats.max_latency = self.stats.max_latency.max(latency);
        let hist = &mut self.stats.latency_histogram;
        if hist.len() <= latency as usize {
            hist.resize(latency as usize + 1, 0);
        }
        hist[latency as usize] += 1;
        Some(head.node)
    }

    fn lookup_safe(&self, code: MortonCode) -> Option<&Arc<Node>> {
        let list = self.safe.get(code.level() as usize)?;
        list.binary_search_by_key(&code, |n| n.code).ok().map(|i| &list[i])
    }

    fn is_safe(&self, code: MortonCode) -> bool {
        self.safe
            .get(code.level() as usize)
            .and_then(|l| l.last())
            .is_some_and(|last| code <= last.code)
    }

    /// The parent replacing the sibling group starting at entry `i`, when the
    /// whole group is present, none of it is a placeholder, the parent has
    /// been handed off and it projects below the threshold.
    fn prunable(&self, i: usize, end: usize, cam: &Camera) -> Option<Arc<Node>> {
        let first = self.entries[i].code();
        let parent_code = first.parent().ok()?;
        let parent = self.lookup_safe(parent_code)?;
        let k = parent.children.len();
        if i + k > end || parent.children[0].code != first {
            return None;
        }
        let group_present = parent
            .children
            .iter()
            .zip(&self.entries[i..i + k])
            .all(|(c, e)| !e.is_placeholder() && e.code() == c.code);
        if !group_present || lod::projected_extent(parent_code, cam) >= self.config.threshold_pixels {
            return None;
        }
        Some(Arc::clone(parent))
    }

    fn branchable(&self, node: &Node, cam: &Camera) -> bool {
        match node.children.last() {
            None => false,
            Some(last) => {
                self.is_safe(last.code) && lod::projected_extent(node.code, cam) > self.config.threshold_pixels
            }
        }
    }

    /// Nodes to draw: non-placeholder entries with splats inside the frustum.
    pub fn render_set(&self, cam: &Camera) -> Vec<Arc<Node>> {
        self.entries
            .iter()
            .filter_map(FrontEntry::node)
            .filter(|n| !n.splats.is_empty())
            .filter(|n| {
                let (c, r) = lod::cell_sphere(n.code);
                cam.sphere_visible(&c, r)
            })
            .cloned()
            .collect()
    }

    /// Checks span order, that every node entry has been handed off, and
    /// that pending lists are ascending.
    pub fn validate(&self) -> FrontReport {
        let mut checks = [
            ok("entries ascending by span"),
            ok("entries handed off by the builder"),
            ok("pending lists ascending"),
        ];
        let mut prev: Option<MortonCode> = None;
        for e in &self.entries {
            let span = e.code().span(self.l_max).unwrap_or(e.code());
            if prev.is_some_and(|p| p >= span) {
                checks[0].fail(e.code());
            }
            prev = Some(span);
            if let FrontEntry::Node(n) = e {
                if self.lookup_safe(n.code).is_none() {
                    checks[1].fail(n.code);
                }
            }
        }
        for list in &self.pending {
            let codes: Vec<MortonCode> = list.iter().map(|p| p.node.code).collect();
            if let Some(w) = codes.windows(2).find(|w| w[0] >= w[1]) {
                checks[2].fail(w[1]);
            }
        }
        FrontReport { checks }
    }

    /// First node entry for which `volatile` holds.
    pub fn first_volatile(&self, volatile: impl Fn(MortonCode) -> bool) -> Option<MortonCode> {
        self.entries
            .iter()
            .filter(|e| !e.is_placeholder())
            .map(FrontEntry::code)
            .find(|&c| volatile(c))
    }
}
