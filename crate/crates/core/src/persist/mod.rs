//! File formats: raw clouds in, sorted streams and hierarchies in and out.
//!
//! Both binary containers are little-endian throughout and start with a
//! four-byte magic followed by a one-byte version.

mod hierarchy;
mod raw;
mod stream;

pub use hierarchy::{
    assemble, read_hierarchy, read_hierarchy_file, write_hierarchy, write_hierarchy_file, HierarchyHeader,
    HierarchyReader, NodeRecord, HIERARCHY_HEADER_BYTES, HIERARCHY_MAGIC,
};
pub use raw::{normalize, read_ply, read_raw, read_xyz, write_ply, BoundingBox, RawCloud};
pub use stream::{
    read_sorted_stream, read_sorted_stream_file, write_sorted_stream, write_sorted_stream_file, SortedStreamReader,
    StreamHeader, STREAM_HEADER_BYTES, STREAM_MAGIC,
};

pub const FORMAT_VERSION: u8 = 1;

use std::io::{self, Read};

use crate::error::{Error, Result};

/// Fills `buf`, reporting how many bytes were available before end of input.
pub(crate) fn read_full(r: &mut impl Read, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub(crate) fn check_magic(bytes: &[u8], magic: &[u8; 4], what: &str) -> Result<()> {
    if &bytes[..4] != magic {
        return Err(Error::Format(format!(
            "not a {what} file (magic {:?})",
            String::from_utf8_lossy(&bytes[..4])
        )));
    }
    if bytes[4] != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported {what} version {}", bytes[4])));
    }
    Ok(())
}

pub(crate) fn f32_at(bytes: &[u8], at: usize) -> f32 {
    f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub(crate) fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub(crate) fn u64_at(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}
