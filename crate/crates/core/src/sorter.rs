//! Morton ordering of raw points, as one sort or as a chunk sequence.
//!
//! Chunks cover consecutive code ranges picked from a sample, so their
//! concatenation is globally ordered and the first chunk can be consumed
//! while later ones are still being sorted. Records with equal codes keep
//! their input order, which makes every chunking produce the same sequence.

use std::thread::{self, JoinHandle};

use crossbeam_channel::{bounded, Receiver};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::slice::ParallelSliceMut;

use crate::error::{Error, Result};
use crate::morton::{GridCoords, MortonCode, MAX_LEVEL};

/// Default depth of the sort codes; deeper than the default hierarchy so
/// one sorted stream serves several build depths.
pub const DEFAULT_SORT_LEVEL: u8 = 10;

/// A normalized input point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawPoint {
    /// Coordinates in [0, 1].
    pub position: [f32; 3],
    pub normal: Option<[f32; 3]>,
    pub color: Option<[u8; 3]>,
}

impl RawPoint {
    pub fn at(position: [f32; 3]) -> Self {
        RawPoint {
            position,
            normal: None,
            color: None,
        }
    }
}

/// A point tagged with the code of its cell at the sort level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointRecord {
    pub code: MortonCode,
    pub point: RawPoint,
}

impl PointRecord {
    /// The record's code truncated to a shallower build depth.
    pub fn code_at(&self, level: u8) -> MortonCode {
        self.code.ancestor_at(level).unwrap_or(self.code)
    }
}

/// Cell index of coordinate `c` on a grid of `2^level` cells.
pub fn quantize(c: f32, level: u8) -> u32 {
    let cells = 1u64 << level;
    let q = (c as f64 * cells as f64).floor();
    q.clamp(0.0, (cells - 1) as f64) as u32
}

/// Tags every point with the code of its cell at `sort_level`.
pub fn assign_codes(points: &[RawPoint], sort_level: u8) -> Result<Vec<PointRecord>> {
    if sort_level > MAX_LEVEL {
        return Err(Error::Config(format!("sort level {sort_level} exceeds {MAX_LEVEL}")));
    }
    points
        .iter()
        .enumerate()
        .map(|(index, p)| {
            if !p.position.iter().all(|c| c.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            let [x, y, z] = p.position.map(|c| quantize(c, sort_level));
            let code = MortonCode::encode(GridCoords::new(x, y, z, sort_level))?;
            Ok(PointRecord { code, point: *p })
        })
        .collect()
}

/// Sorts by code; equal codes keep their relative order.
pub fn sort_records(records: &mut [PointRecord]) {
    records.par_sort_by_key(|r| r.code);
}

/// Sorted chunks covering consecutive code ranges, produced on demand.
///
/// The first call to `next` partitions the input by sampled quantiles;
/// each call then sorts and yields one range.
pub struct ChunkedSort {
    input: Option<Vec<PointRecord>>,
    num_chunks: usize,
    buckets: std::vec::IntoIter<Vec<PointRecord>>,
}

impl ChunkedSort {
    pub fn new(records: Vec<PointRecord>, num_chunks: usize) -> Result<Self> {
        if num_chunks == 0 {
            return Err(Error::Config("chunk count must be at least 1".into()));
        }
        Ok(ChunkedSort {
            input: Some(records),
            num_chunks,
            buckets: Vec::new().into_iter(),
        })
    }

    fn partition(&mut self, records: Vec<PointRecord>) {
        let k = self.num_chunks;
        if k == 1 {
            self.buckets = vec![records].into_iter();
            return;
        }
        let splitters = sample_splitters(&records, k);
        let mut buckets: Vec<Vec<PointRecord>> = (0..k).map(|_| Vec::with_capacity(records.len() / k + 1)).collect();
        for r in records {
            buckets[splitters.partition_point(|&s| s <= r.code)].push(r);
        }
        self.buckets = buckets.into_iter();
    }
}

impl Iterator for ChunkedSort {
    type Item = Vec<PointRecord>;

    fn next(&mut self) -> Option<Vec<PointRecord>> {
        if let Some(records) = self.input.take() {
            self.partition(records);
        }
        let mut bucket = self.buckets.next()?;
        sort_records(&mut bucket);
        Some(bucket)
    }
}

/// `k - 1` ascending split codes from a reservoir sample of about 1% of the input.
fn sample_splitters(records: &[PointRecord], k: usize) -> Vec<MortonCode> {
    let size = (records.len() / 100).max(16 * k).min(records.len());
    if size == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_c0de);
    let mut sample: Vec<MortonCode> = records[..size].iter().map(|r| r.code).collect();
    for (i, r) in records.iter().enumerate().skip(size) {
        let j = rng.gen_range(0..=i);
        if j < size {
            sample[j] = r.code;
        }
    }
    sample.sort_unstable();
    (1..k).map(|i| sample[i * size / k]).collect()
}

/// Runs a [`ChunkedSort`] on its own thread, handing chunks over a channel
/// that holds at most `capacity` finished chunks.
pub fn spawn_chunked_sort(
    records: Vec<PointRecord>,
    num_chunks: usize,
    capacity: usize,
) -> Result<(Receiver<Vec<PointRecord>>, JoinHandle<()>)> {
    let chunks = ChunkedSort::new(records, num_chunks)?;
    let (tx, rx) = bounded(capacity.max(1));
    let handle = thread::Builder::new().name("cutfront-sort".into()).spawn(move || {
        for chunk in chunks {
            if tx.send(chunk).is_err() {
                break;
            }
        }
    })?;
    Ok((rx, handle))
}
