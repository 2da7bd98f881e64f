//! Loading either kind of input file.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use anyhow::{Context, Result};
use cutfront::persist::{read_raw, read_sorted_stream, BoundingBox, StreamHeader, STREAM_MAGIC};
use cutfront::sorter::assign_codes;
use cutfront::PointRecord;

/// Records with their original bounds, and whether they are already sorted.
pub struct Loaded {
    pub records: Vec<PointRecord>,
    pub bbox: BoundingBox,
    pub sort_level: u8,
    pub sorted: bool,
}

pub fn is_sorted_stream(path: &Path) -> Result<bool> {
    let mut magic = [0u8; 4];
    let mut f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let n = f.read(&mut magic)?;
    Ok(n == 4 && &magic == STREAM_MAGIC)
}

/// Header of a sorted stream without reading its records.
pub fn stream_header(path: &Path) -> Result<StreamHeader> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let reader = cutfront::persist::SortedStreamReader::new(BufReader::new(f))
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(*reader.header())
}

/// Reads a sorted stream as is, or a raw cloud tagged at `sort_level`.
pub fn load(path: &Path, sort_level: u8) -> Result<Loaded> {
    if is_sorted_stream(path)? {
        let f = File::open(path)?;
        let (h, records) =
            read_sorted_stream(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))?;
        return Ok(Loaded {
            records,
            bbox: h.bbox,
            sort_level: h.sort_level,
            sorted: true,
        });
    }
    let cloud = read_raw(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(Loaded {
        records: assign_codes(&cloud.points, sort_level)?,
        bbox: cloud.bbox,
        sort_level,
        sorted: false,
    })
}
