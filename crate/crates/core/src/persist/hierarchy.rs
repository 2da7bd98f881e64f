//! Hierarchy files: every node of a finished tree in breadth-first order.
//!
//! Header, 48 bytes:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `OMHF`                             |
//! | 4      | 1    | version (1)                              |
//! | 5      | 1    | depth `l_max`                            |
//! | 6      | 1    | flags: bit 0 leaf collapse applied       |
//! | 7      | 1    | reserved, zero                           |
//! | 8      | 8    | node count, u64                          |
//! | 16     | 4    | parent point ratio numerator, u32        |
//! | 20     | 4    | parent point ratio denominator, u32      |
//! | 24     | 24   | original bounds: min xyz, max xyz as f32 |
//!
//! Each node record is the code as u64, a child mask byte (bit i set for
//! a child in octant i), the splat count as u32 and the splats, 39 bytes
//! each. Children of a node follow its earlier siblings' children, so a
//! file prefix always describes a coarse version of the whole tree.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::raw::BoundingBox;
use super::{check_magic, f32_at, read_full, u32_at, u64_at, FORMAT_VERSION};
use crate::cut::Node;
use crate::error::{Error, Result};
use crate::lod::{Splat, SPLAT_BYTES};
use crate::morton::MortonCode;

pub const HIERARCHY_MAGIC: &[u8; 4] = b"OMHF";
pub const HIERARCHY_HEADER_BYTES: usize = 48;

const FLAG_LEAF_COLLAPSE: u8 = 1;
const RATIO_DENOMINATOR: u32 = 1_000_000;
const NODE_FIXED_BYTES: usize = 8 + 1 + 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HierarchyHeader {
    pub l_max: u8,
    pub node_count: u64,
    pub leaf_collapse: bool,
    pub ratio_numerator: u32,
    pub ratio_denominator: u32,
    pub bbox: BoundingBox,
}

impl HierarchyHeader {
    pub fn new(l_max: u8, node_count: u64, leaf_collapse: bool, ratio: f64, bbox: BoundingBox) -> Self {
        HierarchyHeader {
            l_max,
            node_count,
            leaf_collapse,
            ratio_numerator: (ratio * RATIO_DENOMINATOR as f64).round() as u32,
            ratio_denominator: RATIO_DENOMINATOR,
            bbox,
        }
    }

    pub fn ratio(&self) -> f64 {
        self.ratio_numerator as f64 / self.ratio_denominator as f64
    }

    fn encode(&self) -> [u8; HIERARCHY_HEADER_BYTES] {
        let mut b = [0u8; HIERARCHY_HEADER_BYTES];
        b[..4].copy_from_slice(HIERARCHY_MAGIC);
        b[4] = FORMAT_VERSION;
        b[5] = self.l_max;
        b[6] = if self.leaf_collapse { FLAG_LEAF_COLLAPSE } else { 0 };
        b[8..16].copy_from_slice(&self.node_count.to_le_bytes());
        b[16..20].copy_from_slice(&self.ratio_numerator.to_le_bytes());
        b[20..24].copy_from_slice(&self.ratio_denominator.to_le_bytes());
        for (i, v) in self.bbox.min.iter().chain(&self.bbox.max).enumerate() {
            b[24 + 4 * i..28 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    fn decode(b: &[u8; HIERARCHY_HEADER_BYTES]) -> Result<Self> {
        check_magic(b, HIERARCHY_MAGIC, "hierarchy")?;
        if b[6] & !FLAG_LEAF_COLLAPSE != 0 {
            return Err(Error::Format(format!("unknown hierarchy flags {:#x}", b[6])));
        }
        let f = |i: usize| f32_at(b, 24 + 4 * i);
        let h = HierarchyHeader {
            l_max: b[5],
            node_count: u64_at(b, 8),
            leaf_collapse: b[6] & FLAG_LEAF_COLLAPSE != 0,
            ratio_numerator: u32_at(b, 16),
            ratio_denominator: u32_at(b, 20),
            bbox: BoundingBox {
                min: [f(0), f(1), f(2)],
                max: [f(3), f(4), f(5)],
            },
        };
        if h.ratio_denominator == 0 {
            return Err(Error::Format("zero parent ratio denominator".into()));
        }
        Ok(h)
    }
}

/// One node as stored: its code, occupied octants and payload.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub code: MortonCode,
    pub child_mask: u8,
    pub splats: Vec<Splat>,
}

/// Writes `root` and its descendants breadth-first. The header's node
/// count is taken from the tree.
pub fn write_hierarchy(mut w: impl Write, header: &HierarchyHeader, root: &Arc<Node>) -> Result<u64> {
    let nodes = root.breadth_first();
    let header = HierarchyHeader {
        node_count: nodes.len() as u64,
        ..*header
    };
    w.write_all(&header.encode())?;
    let mut buf = Vec::new();
    for n in &nodes {
        if n.is_placeholder {
            return Err(Error::domain(format!("placeholder {} in a finished tree", n.code)));
        }
        buf.extend_from_slice(&n.code.bits().to_le_bytes());
        buf.push(n.child_mask());
        buf.extend_from_slice(&(n.splats.len() as u32).to_le_bytes());
        for s in &n.splats {
            s.write_le(&mut buf);
        }
        if buf.len() >= 1 << 20 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(nodes.len() as u64)
}

pub fn write_hierarchy_file(path: &Path, header: &HierarchyHeader, root: &Arc<Node>) -> Result<u64> {
    write_hierarchy(BufWriter::new(File::create(path)?), header, root)
}

/// Yields node records one at a time, coarse to fine.
pub struct HierarchyReader<R> {
    inner: R,
    header: HierarchyHeader,
    read: u64,
}

impl<R: Read> HierarchyReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut b = [0u8; HIERARCHY_HEADER_BYTES];
        if read_full(&mut inner, &mut b)? < HIERARCHY_HEADER_BYTES {
            return Err(Error::Format("hierarchy header is truncated".into()));
        }
        Ok(HierarchyReader {
            header: HierarchyHeader::decode(&b)?,
            inner,
            read: 0,
        })
    }

    pub fn header(&self) -> &HierarchyHeader {
        &self.header
    }

    fn read_record(&mut self) -> Result<NodeRecord> {
        let truncated = |found| Error::Truncated {
            expected: self.header.node_count,
            found,
        };
        let mut fixed = [0u8; NODE_FIXED_BYTES];
        if read_full(&mut self.inner, &mut fixed)? < NODE_FIXED_BYTES {
            return Err(truncated(self.read));
        }
        let code = MortonCode::from_bits(u64_at(&fixed, 0))
            .map_err(|_| Error::Corrupt(format!("record {} has a malformed code", self.read)))?;
        if code.level() > self.header.l_max {
            return Err(Error::Corrupt(format!("node {code} lies below the file depth")));
        }
        let count = u32_at(&fixed, 9) as usize;
        let mut payload = vec![0u8; count * SPLAT_BYTES];
        if read_full(&mut self.inner, &mut payload)? < payload.len() {
            return Err(truncated(self.read));
        }
        Ok(NodeRecord {
            code,
            child_mask: fixed[8],
            splats: payload.chunks_exact(SPLAT_BYTES).map(Splat::read_le).collect(),
        })
    }
}

impl<R: Read> Iterator for HierarchyReader<R> {
    type Item = Result<NodeRecord>;

    fn next(&mut self) -> Option<Result<NodeRecord>> {
        if self.read >= self.header.node_count {
            return None;
        }
        let r = self.read_record();
        self.read += 1;
        Some(r)
    }
}

/// Rebuilds a tree from breadth-first records.
///
/// With `complete` set, every announced child must be present. Otherwise the
/// records may be any prefix of a file, and nodes whose children have not
/// been read yet come out as leaves of a coarser tree.
pub fn assemble(records: &[NodeRecord], complete: bool) -> Result<Arc<Node>> {
    let first = records.first().ok_or_else(|| Error::Corrupt("no nodes".into()))?;
    if first.code != MortonCode::ROOT {
        return Err(Error::Corrupt(format!("first node {} is not the root", first.code)));
    }
    // Children of record i occupy records[ranges[i]].
    let mut ranges = Vec::with_capacity(records.len());
    let mut next = 1usize;
    for r in records {
        let start = next;
        for octant in (0..8).filter(|o| r.child_mask & (1 << o) != 0) {
            if let Some(child) = records.get(next) {
                let expected = r
                    .code
                    .child(octant)
                    .map_err(|_| Error::Corrupt(format!("node {} at the deepest level announces children", r.code)))?;
                if child.code != expected {
                    return Err(Error::Corrupt(format!(
                        "node {} expects child {expected} but record {next} is {}",
                        r.code, child.code
                    )));
                }
            } else if complete {
                return Err(Error::Corrupt(format!("node {} announces a missing child", r.code)));
            }
            next += 1;
        }
        ranges.push(start..next.min(records.len()));
    }
    if next < records.len() {
        return Err(Error::Corrupt(format!(
            "{} records belong to no parent",
            records.len() - next
        )));
    }
    let mut built: Vec<Option<Arc<Node>>> = vec![None; records.len()];
    for i in (0..records.len()).rev() {
        let children = ranges[i]
            .clone()
            .map(|j| built[j].take().expect("children are built before parents"))
            .collect();
        built[i] = Some(Arc::new(Node {
            code: records[i].code,
            splats: records[i].splats.clone(),
            children,
            is_placeholder: false,
        }));
    }
    Ok(built[0].take().unwrap())
}

pub fn read_hierarchy(r: impl Read) -> Result<(HierarchyHeader, Arc<Node>)> {
    let reader = HierarchyReader::new(r)?;
    let header = *reader.header();
    let records = reader.collect::<Result<Vec<_>>>()?;
    Ok((header, assemble(&records, true)?))
}

pub fn read_hierarchy_file(path: &Path) -> Result<(HierarchyHeader, Arc<Node>)> {
    read_hierarchy(BufReader::new(File::open(path)?))
}
