//! Streaming, multi-threaded hierarchy construction.
//!
//! The builder owns the cut. Each fix pass takes the roots of one level whose
//! parents can be created, splits them into fixed-size worklists and builds
//! the parents on a thread pool. A sibling group cut in two by a worklist
//! boundary yields the same parent twice; joining the result lists in order
//! folds such pairs back into one node. After every pass the builder hands
//! off the nodes that can no longer move, so fronts may render them.

use std::collections::VecDeque;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use crossbeam_channel::{Receiver, TryRecvError};
use log::{debug, trace};
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::cut::{InvariantReport, Node, ObliqueCut, ParentPolicy};
use crate::error::{Error, Result};
use crate::front::DEFAULT_SEGMENT_BUDGET;
use crate::lod::{self, Splat};
use crate::morton::{MortonCode, MAX_LEVEL};
use crate::publish::{Progress, SharedHierarchy};
use crate::sorter::PointRecord;

/// Records concatenated at a time when streaming a large chunk, so that
/// fronts see the first nodes long before the chunk is done.
pub const INGEST_BATCH: usize = 1 << 15;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildConfig {
    pub l_max: u8,
    /// Roots per worklist.
    pub worklist_size: usize,
    /// Fraction of the children's splats kept by a parent.
    pub parent_ratio: f64,
    pub leaf_collapse: bool,
    pub worker_threads: usize,
    pub projection_threshold: f64,
    pub segment_budget: usize,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            l_max: 7,
            worklist_size: 32,
            parent_ratio: 0.25,
            leaf_collapse: false,
            worker_threads: thread::available_parallelism().map_or(1, |n| n.get()),
            projection_threshold: 20.0,
            segment_budget: DEFAULT_SEGMENT_BUDGET,
        }
    }
}

impl BuildConfig {
    pub fn check(&self) -> Result<()> {
        if !(1..=MAX_LEVEL).contains(&self.l_max) {
            return Err(Error::Config(format!("l_max {} outside 1..={MAX_LEVEL}", self.l_max)));
        }
        if self.worklist_size == 0 {
            return Err(Error::Config("worklist size must be at least 1".into()));
        }
        if self.worker_threads == 0 {
            return Err(Error::Config("at least one worker thread is required".into()));
        }
        if self.projection_threshold.is_nan() || self.projection_threshold <= 0.0 {
            return Err(Error::Config("projection threshold must be positive".into()));
        }
        self.policy().check()
    }

    pub fn policy(&self) -> ParentPolicy {
        ParentPolicy {
            ratio: self.parent_ratio,
            leaf_collapse: self.leaf_collapse,
        }
    }
}

/// Counters accumulated over a build.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub passes: u64,
    pub worklists: u64,
    /// Parents built twice because their sibling group straddled worklists.
    pub duplicates_merged: u64,
    /// Largest number of subtree roots held by the cut at once.
    pub peak_roots: usize,
}

/// What to do after a pass at some level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NextPass {
    /// Keep climbing to the level above.
    Upward,
    /// Leave the upper levels for later and ingest queued input.
    NewInput,
}

/// Level-switch rule: climb while the level above has a full worklist of
/// ready roots; otherwise prefer new input when a full worklist of it waits.
pub fn next_pass(ready_above: usize, queued_input: usize, worklist_size: usize) -> NextPass {
    if ready_above >= worklist_size || queued_input < worklist_size {
        NextPass::Upward
    } else {
        NextPass::NewInput
    }
}

type ProgressFn = Box<dyn FnMut(&Progress) + Send>;

pub struct Builder {
    config: BuildConfig,
    cut: ObliqueCut,
    shared: Arc<SharedHierarchy>,
    pool: ThreadPool,
    /// Last leaf of the previous batch, held back in case the next batch
    /// continues it with records of the same cell.
    tail: Option<(MortonCode, Vec<Splat>)>,
    radius: f32,
    stats: BuildStats,
    on_progress: Option<ProgressFn>,
}

impl Builder {
    pub fn new(config: BuildConfig) -> Result<Self> {
        Self::with_shared(config, SharedHierarchy::new(config.l_max))
    }

    pub fn with_shared(config: BuildConfig, shared: Arc<SharedHierarchy>) -> Result<Self> {
        config.check()?;
        if shared.l_max() != config.l_max {
            return Err(Error::Config(format!(
                "shared hierarchy has depth {} but the build has {}",
                shared.l_max(),
                config.l_max
            )));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.worker_threads)
            .thread_name(|i| format!("cutfront-worker-{i}"))
            .build()
            .map_err(|e| Error::Worker(e.to_string()))?;
        Ok(Builder {
            cut: ObliqueCut::with_policy(config.l_max, config.policy())?,
            radius: lod::default_radius(config.l_max),
            config,
            shared,
            pool,
            tail: None,
            stats: BuildStats::default(),
            on_progress: None,
        })
    }

    pub fn config(&self) -> &BuildConfig {
        &self.config
    }

    pub fn cut(&self) -> &ObliqueCut {
        &self.cut
    }

    pub fn shared(&self) -> &Arc<SharedHierarchy> {
        &self.shared
    }

    pub fn stats(&self) -> &BuildStats {
        &self.stats
    }

    pub fn validate(&self) -> InvariantReport {
        self.cut.validate()
    }

    /// Called with the build progress at the end of every round of passes.
    pub fn on_progress(&mut self, f: impl FnMut(&Progress) + Send + 'static) {
        self.on_progress = Some(Box::new(f));
    }

    /// Declares the input size for progress reporting.
    pub fn expect_records(&self, total: u64) {
        self.shared.expect_records(total);
    }

    /// Concatenates a sorted batch and brings the cut up to date.
    pub fn push_chunk(&mut self, records: &[PointRecord]) -> Result<()> {
        self.ingest(records)?;
        self.advance(0);
        Ok(())
    }

    /// Concatenates a sorted batch without creating any parents.
    ///
    /// Records are truncated to the build depth; consecutive records of one
    /// cell form a single leaf. The batch's last leaf is held back until the
    /// next batch or [`finish`](Self::finish) shows it is complete.
    pub fn ingest(&mut self, records: &[PointRecord]) -> Result<()> {
        if records.is_empty() {
            return Ok(());
        }
        let l_max = self.config.l_max;
        let mut leaves: Vec<Node> = Vec::new();
        let mut current = self.tail.take();
        for r in records {
            let code = r.code_at(l_max);
            if code.level() != l_max {
                return Err(Error::domain(format!(
                    "record code {} is shallower than the build depth {l_max}",
                    r.code
                )));
            }
            let splat = Splat::from_point(r.point.position, r.point.normal, r.point.color, self.radius);
            match &mut current {
                Some((c, splats)) if *c == code => splats.push(splat),
                Some((c, _)) if *c > code => {
                    return Err(Error::OrderViolation { prev: *c, next: code });
                }
                _ => {
                    if let Some((c, splats)) = current.replace((code, vec![splat])) {
                        leaves.push(Node::leaf(c, splats));
                    }
                }
            }
        }
        if let (Some(first), Some(m_c)) = (leaves.first(), self.cut.m_c()) {
            if first.code <= m_c {
                return Err(Error::OrderViolation {
                    prev: m_c,
                    next: first.code,
                });
            }
        }
        self.tail = current;
        self.concatenate(leaves)?;
        self.shared.add_consumed(records.len() as u64);
        Ok(())
    }

    fn concatenate(&mut self, leaves: Vec<Node>) -> Result<()> {
        if leaves.is_empty() {
            return Ok(());
        }
        let l_max = self.config.l_max;
        // Placeholders go out before any of these leaves can be handed off.
        let placeholders: Vec<MortonCode> = leaves.iter().map(|l| l.code.span(l_max)).collect::<Result<_>>()?;
        self.cut.concatenate(leaves)?;
        self.shared.push_placeholders(placeholders);
        Ok(())
    }

    /// Runs fix passes bottom-up. With `queued_input` records waiting, the
    /// level-switch rule may stop early so new input enters sooner.
    pub fn advance(&mut self, queued_input: usize) {
        let mut level = self.config.l_max;
        while level > 0 {
            self.run_fix_pass(level);
            level -= 1;
            if level == 0 {
                break;
            }
            let ready = self.cut.eligible_len(level);
            if next_pass(ready, queued_input, self.config.worklist_size) == NextPass::NewInput {
                trace!("switching to new input with {ready} ready roots at level {level}");
                break;
            }
        }
        let roots = self.cut.root_count();
        self.stats.peak_roots = self.stats.peak_roots.max(roots);
        if let Some(f) = &mut self.on_progress {
            f(&self.shared.progress());
        }
    }

    /// One pass at `level`: builds the parents of every ready root, joins
    /// duplicates, installs the parents and hands off what became final.
    /// Returns the number of parents installed.
    pub fn run_fix_pass(&mut self, level: u8) -> usize {
        let roots = self.cut.take_eligible(level);
        if roots.is_empty() {
            return 0;
        }
        self.stats.passes += 1;
        let cut = &self.cut;
        let results: Vec<Vec<Arc<Node>>> = if roots.len() <= self.config.worklist_size {
            vec![cut.build_parents(&roots)]
        } else {
            self.pool.install(|| {
                roots
                    .par_chunks(self.config.worklist_size)
                    .map(|w| cut.build_parents(w))
                    .collect()
            })
        };
        self.stats.worklists += results.len() as u64;
        self.stats.duplicates_merged += results
            .windows(2)
            .filter(|w| match (w[0].last(), w[1].first()) {
                (Some(a), Some(b)) => a.code == b.code,
                _ => false,
            })
            .count() as u64;
        let merged = cut.merge_duplicates(results);
        let installed = self.cut.install_parents(level - 1, merged);
        debug_assert_eq!(
            installed
                .iter()
                .map(|p| p.children.len().max(p.is_leaf() as usize))
                .sum::<usize>()
                + installed.iter().filter(|p| p.is_placeholder).count(),
            roots.len(),
            "children lost while joining worklists at level {level}"
        );
        self.shared.count_created(level - 1, installed.len());
        // Grandchildren of the new parents are now out of the cut's reach.
        let grandchildren: Vec<Arc<Node>> = installed
            .iter()
            .flat_map(|p| p.children.iter())
            .flat_map(|c| c.children.iter().cloned())
            .collect();
        self.shared.publish(level + 1, grandchildren);
        debug!(
            "pass at level {level}: {} roots -> {} parents",
            roots.len(),
            installed.len()
        );
        installed.len()
    }

    /// Ends the stream: flushes the held-back leaf, completes every level,
    /// hands off the top of the tree and returns its root.
    pub fn finish(mut self) -> Result<Arc<Node>> {
        match self.finish_inner() {
            Ok(root) => Ok(root),
            Err(e) => {
                self.shared.set_failure(e.to_string());
                Err(e)
            }
        }
    }

    fn finish_inner(&mut self) -> Result<Arc<Node>> {
        if let Some((code, splats)) = self.tail.take() {
            self.concatenate(vec![Node::leaf(code, splats)])?;
        }
        if self.cut.m_c().is_none() {
            return Err(Error::EmptyHierarchy);
        }
        self.cut.seal();
        self.advance(0);
        let cut = std::mem::replace(&mut self.cut, ObliqueCut::new(self.config.l_max)?);
        let root = cut.extract_tree()?;
        self.shared.publish(1, root.children.clone());
        self.shared.publish(0, vec![Arc::clone(&root)]);
        self.shared.set_root(Arc::clone(&root));
        Ok(root)
    }
}

/// Builds a complete hierarchy from sorted records in batches of `batch`.
pub fn build_sorted(records: &[PointRecord], config: BuildConfig, batch: usize) -> Result<Arc<Node>> {
    let mut builder = Builder::new(config)?;
    builder.expect_records(records.len() as u64);
    for chunk in records.chunks(batch.max(1)) {
        builder.push_chunk(chunk)?;
    }
    builder.finish()
}

/// A builder running on its own thread, fed sorted chunks through a channel.
pub struct StreamingBuild {
    shared: Arc<SharedHierarchy>,
    handle: JoinHandle<Result<(Arc<Node>, BuildStats)>>,
}

impl StreamingBuild {
    /// Starts building from `chunks`; the build finishes when the sender
    /// side disconnects. `total` is the expected record count, for progress.
    pub fn spawn(config: BuildConfig, chunks: Receiver<Vec<PointRecord>>, total: u64) -> Result<Self> {
        let shared = SharedHierarchy::new(config.l_max);
        let mut builder = Builder::with_shared(config, Arc::clone(&shared))?;
        builder.expect_records(total);
        let fail = Arc::clone(&shared);
        let handle = thread::Builder::new().name("cutfront-build".into()).spawn(move || {
            let r = run_stream(&mut builder, &chunks);
            match r {
                Ok(()) => {
                    let stats = builder.stats().clone();
                    builder.finish().map(|root| (root, stats))
                }
                Err(e) => {
                    fail.set_failure(e.to_string());
                    Err(e)
                }
            }
        })?;
        Ok(StreamingBuild { shared, handle })
    }

    pub fn shared(&self) -> &Arc<SharedHierarchy> {
        &self.shared
    }

    pub fn is_finished(&self) -> bool {
        self.handle.is_finished()
    }

    pub fn join(self) -> Result<(Arc<Node>, BuildStats)> {
        self.handle
            .join()
            .map_err(|_| Error::Worker("build thread panicked".into()))?
    }
}

fn run_stream(builder: &mut Builder, chunks: &Receiver<Vec<PointRecord>>) -> Result<()> {
    let mut queue: VecDeque<Vec<PointRecord>> = VecDeque::new();
    let mut offset = 0;
    let mut disconnected = false;
    loop {
        loop {
            match chunks.try_recv() {
                Ok(c) => queue.push_back(c),
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => {
                    disconnected = true;
                    break;
                }
            }
        }
        if queue.is_empty() {
            if !disconnected {
                if let Ok(c) = chunks.recv() {
                    queue.push_back(c);
                    continue;
                }
            }
            // The producer hangs up both on success and after aborting.
            return builder.shared.failure().map_or(Ok(()), Err);
        }
        let front = &queue[0];
        let end = (offset + INGEST_BATCH).min(front.len());
        builder.ingest(&front[offset..end])?;
        offset = end;
        if offset == front.len() {
            queue.pop_front();
            offset = 0;
        }
        let queued = queue.iter().map(Vec::len).sum::<usize>() - offset;
        builder.advance(queued);
    }
}
