//! Sorted point streams.
//!
//! Header, 40 bytes:
//!
//! | offset | size | field                                    |
//! |--------|------|------------------------------------------|
//! | 0      | 4    | magic `OMSS`                             |
//! | 4      | 1    | version (1)                              |
//! | 5      | 1    | sort level                               |
//! | 6      | 1    | flags: bit 0 color, bit 1 normal         |
//! | 7      | 1    | reserved, zero                           |
//! | 8      | 8    | record count, u64                        |
//! | 16     | 24   | original bounds: min xyz, max xyz as f32 |
//!
//! Each record is the code as u64, the normalized position as three f32,
//! then three f32 normal components and three color bytes when flagged.
//! Records are non-descending by code.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::raw::BoundingBox;
use super::{check_magic, f32_at, read_full, u64_at, FORMAT_VERSION};
use crate::error::{Error, Result};
use crate::morton::MortonCode;
use crate::sorter::{PointRecord, RawPoint};

pub const STREAM_MAGIC: &[u8; 4] = b"OMSS";
pub const STREAM_HEADER_BYTES: usize = 40;

const FLAG_COLOR: u8 = 1;
const FLAG_NORMAL: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamHeader {
    pub sort_level: u8,
    pub record_count: u64,
    pub has_color: bool,
    pub has_normal: bool,
    pub bbox: BoundingBox,
}

impl StreamHeader {
    /// Header describing `records`; attributes are kept only when every
    /// record has them.
    pub fn for_records(records: &[PointRecord], sort_level: u8, bbox: BoundingBox) -> Self {
        StreamHeader {
            sort_level,
            record_count: records.len() as u64,
            has_color: !records.is_empty() && records.iter().all(|r| r.point.color.is_some()),
            has_normal: !records.is_empty() && records.iter().all(|r| r.point.normal.is_some()),
            bbox,
        }
    }

    pub fn record_bytes(&self) -> usize {
        8 + 12 + if self.has_normal { 12 } else { 0 } + if self.has_color { 3 } else { 0 }
    }

    fn encode(&self) -> [u8; STREAM_HEADER_BYTES] {
        let mut b = [0u8; STREAM_HEADER_BYTES];
        b[..4].copy_from_slice(STREAM_MAGIC);
        b[4] = FORMAT_VERSION;
        b[5] = self.sort_level;
        b[6] = if self.has_color { FLAG_COLOR } else { 0 } | if self.has_normal { FLAG_NORMAL } else { 0 };
        b[8..16].copy_from_slice(&self.record_count.to_le_bytes());
        for (i, v) in self.bbox.min.iter().chain(&self.bbox.max).enumerate() {
            b[16 + 4 * i..20 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    fn decode(b: &[u8; STREAM_HEADER_BYTES]) -> Result<Self> {
        check_magic(b, STREAM_MAGIC, "sorted stream")?;
        if b[6] & !(FLAG_COLOR | FLAG_NORMAL) != 0 {
            return Err(Error::Format(format!("unknown sorted stream flags {:#x}", b[6])));
        }
        let f = |i: usize| f32_at(b, 16 + 4 * i);
        Ok(StreamHeader {
            sort_level: b[5],
            record_count: u64_at(b, 8),
            has_color: b[6] & FLAG_COLOR != 0,
            has_normal: b[6] & FLAG_NORMAL != 0,
            bbox: BoundingBox {
                min: [f(0), f(1), f(2)],
                max: [f(3), f(4), f(5)],
            },
        })
    }
}

/// Writes a header and its records, checking their order on the way.
pub fn write_sorted_stream(mut w: impl Write, header: &StreamHeader, records: &[PointRecord]) -> Result<()> {
    if header.record_count != records.len() as u64 {
        return Err(Error::Format(format!(
            "header announces {} records but {} were given",
            header.record_count,
            records.len()
        )));
    }
    w.write_all(&header.encode())?;
    let mut buf = Vec::with_capacity(header.record_bytes() * records.len().min(1 << 16));
    let mut prev: Option<MortonCode> = None;
    for r in records {
        if r.code.level() != header.sort_level {
            return Err(Error::domain(format!("record {} is not at the sort level", r.code)));
        }
        if let Some(p) = prev.filter(|&p| p > r.code) {
            return Err(Error::OrderViolation { prev: p, next: r.code });
        }
        prev = Some(r.code);
        buf.extend_from_slice(&r.code.bits().to_le_bytes());
        let p = &r.point;
        for c in p.position {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        if header.has_normal {
            let n = p
                .normal
                .ok_or_else(|| Error::domain("record without the announced normal"))?;
            for c in n {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        if header.has_color {
            let c = p
                .color
                .ok_or_else(|| Error::domain("record without the announced color"))?;
            buf.extend_from_slice(&c);
        }
        if buf.len() >= 1 << 20 {
            w.write_all(&buf)?;
            buf.clear();
        }
    }
    w.write_all(&buf)?;
    w.flush()?;
    Ok(())
}

pub fn write_sorted_stream_file(path: &Path, header: &StreamHeader, records: &[PointRecord]) -> Result<()> {
    write_sorted_stream(BufWriter::new(File::create(path)?), header, records)
}

/// Reads records in batches, verifying order across batch boundaries.
pub struct SortedStreamReader<R> {
    inner: R,
    header: StreamHeader,
    read: u64,
    prev: Option<MortonCode>,
}

impl<R: Read> SortedStreamReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut b = [0u8; STREAM_HEADER_BYTES];
        if read_full(&mut inner, &mut b)? < STREAM_HEADER_BYTES {
            return Err(Error::Format("sorted stream header is truncated".into()));
        }
        let header = StreamHeader::decode(&b)?;
        Ok(SortedStreamReader {
            inner,
            header,
            read: 0,
            prev: None,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    pub fn remaining(&self) -> u64 {
        self.header.record_count - self.read
    }

    /// Up to `max` further records; empty once all have been read.
    pub fn read_batch(&mut self, max: usize) -> Result<Vec<PointRecord>> {
        let n = self.remaining().min(max as u64) as usize;
        let size = self.header.record_bytes();
        let mut buf = vec![0u8; n * size];
        let got = read_full(&mut self.inner, &mut buf)?;
        if got < buf.len() {
            return Err(Error::Truncated {
                expected: self.header.record_count,
                found: self.read + (got / size) as u64,
            });
        }
        let mut out = Vec::with_capacity(n);
        for rec in buf.chunks_exact(size) {
            let bits = u64_at(rec, 0);
            let code = MortonCode::from_bits(bits)?;
            if code.level() != self.header.sort_level {
                return Err(Error::Format(format!(
                    "record {} has level {} but the stream is sorted at {}",
                    self.read,
                    code.level(),
                    self.header.sort_level
                )));
            }
            if let Some(p) = self.prev.filter(|&p| p > code) {
                return Err(Error::Format(format!(
                    "record {} breaks the order: {code} after {p}",
                    self.read
                )));
            }
            self.prev = Some(code);
            let mut at = 8;
            let mut triple = || {
                let t = [f32_at(rec, at), f32_at(rec, at + 4), f32_at(rec, at + 8)];
                at += 12;
                t
            };
            let position = triple();
            let normal = self.header.has_normal.then(&mut triple);
            let color = self
                .header
                .has_color
                .then(|| [rec[size - 3], rec[size - 2], rec[size - 1]]);
            out.push(PointRecord {
                code,
                point: RawPoint {
                    position,
                    normal,
                    color,
                },
            });
            self.read += 1;
        }
        Ok(out)
    }
}

pub fn read_sorted_stream(r: impl Read) -> Result<(StreamHeader, Vec<PointRecord>)> {
    let mut reader = SortedStreamReader::new(r)?;
    let header = *reader.header();
    let mut records = Vec::new();
    loop {
        let batch = reader.read_batch(1 << 16)?;
        if batch.is_empty() {
            break;
        }
        records.extend(batch);
    }
    Ok((header, records))
}

pub fn read_sorted_stream_file(path: &Path) -> Result<(StreamHeader, Vec<PointRecord>)> {
    read_sorted_stream(BufReader::new(File::open(path)?))
}
