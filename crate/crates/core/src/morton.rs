//! Level-tagged Morton codes.
//!
//! A code stores one prefix bit followed by one interleaved bit triple per
//! octree level, so the level is recoverable from the position of the highest
//! set bit and codes of different levels never collide. Within a triple, x
//! occupies the least-significant bit, then y, then z.

use std::fmt;

use crate::error::{Error, Result};

/// Deepest level representable in a 64-bit code (1 prefix bit + 21 triples).
pub const MAX_LEVEL: u8 = 21;

/// Integer cell coordinates on the grid of a given level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridCoords {
    pub x: u32,
    pub y: u32,
    pub z: u32,
    pub level: u8,
}

impl GridCoords {
    pub fn new(x: u32, y: u32, z: u32, level: u8) -> Self {
        GridCoords { x, y, z, level }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MortonCode(u64);

/// Spread the low 21 bits of `v` so that bit i lands on bit 3i.
#[inline]
fn spread(v: u32) -> u64 {
    let mut x = v as u64 & 0x1f_ffff;
    x = (x | (x << 32)) & 0x001f_0000_0000_ffff;
    x = (x | (x << 16)) & 0x001f_0000_ff00_00ff;
    x = (x | (x << 8)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x << 4)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x << 2)) & 0x1249_2492_4924_9249;
    x
}

#[inline]
fn compact(v: u64) -> u32 {
    let mut x = v & 0x1249_2492_4924_9249;
    x = (x | (x >> 2)) & 0x10c3_0c30_c30c_30c3;
    x = (x | (x >> 4)) & 0x100f_00f0_0f00_f00f;
    x = (x | (x >> 8)) & 0x001f_0000_ff00_00ff;
    x = (x | (x >> 16)) & 0x001f_0000_0000_ffff;
    x = (x | (x >> 32)) & 0x1f_ffff;
    x as u32
}

impl MortonCode {
    pub const ROOT: MortonCode = MortonCode(1);

    /// Wraps raw bits, checking that the prefix bit sits on a triple boundary.
    pub fn from_bits(bits: u64) -> Result<Self> {
        if bits == 0 || (63 - bits.leading_zeros()) % 3 != 0 {
            return Err(Error::MalformedCode(bits));
        }
        Ok(MortonCode(bits))
    }

    pub(crate) const fn from_bits_unchecked(bits: u64) -> Self {
        MortonCode(bits)
    }

    #[inline]
    pub fn bits(self) -> u64 {
        self.0
    }

    #[inline]
    pub fn level(self) -> u8 {
        ((63 - self.0.leading_zeros()) / 3) as u8
    }

    pub fn encode(c: GridCoords) -> Result<Self> {
        if c.level > MAX_LEVEL {
            return Err(Error::domain(format!("level {} exceeds {MAX_LEVEL}", c.level)));
        }
        let side = 1u64 << c.level;
        if c.x as u64 >= side || c.y as u64 >= side || c.z as u64 >= side {
            return Err(Error::domain(format!(
                "coordinates ({}, {}, {}) out of range for level {}",
                c.x, c.y, c.z, c.level
            )));
        }
        let interleaved = spread(c.x) | (spread(c.y) << 1) | (spread(c.z) << 2);
        Ok(MortonCode((1u64 << (3 * c.level as u32)) | interleaved))
    }

    pub fn decode(self) -> GridCoords {
        let level = self.level();
        let payload = self.0 & !(1u64 << (3 * level as u32));
        GridCoords {
            x: compact(payload),
            y: compact(payload >> 1),
            z: compact(payload >> 2),
            level,
        }
    }

    /// Decodes raw bits, rejecting the all-zero word and misplaced prefixes.
    pub fn decode_bits(bits: u64) -> Result<GridCoords> {
        Ok(Self::from_bits(bits)?.decode())
    }

    /// Code of the right-most descendant at `l_max` of a full subtree rooted here.
    pub fn span(self, l_max: u8) -> Result<Self> {
        let level = self.level();
        if level > l_max || l_max > MAX_LEVEL {
            return Err(Error::domain(format!("span of a level-{level} node at l_max {l_max}")));
        }
        Ok(self.suffix_ones(l_max - level))
    }

    /// The placeholder standing in for this node at the deeper `target` level.
    pub fn placeholder(self, target: u8) -> Result<Self> {
        let level = self.level();
        if target <= level || target > MAX_LEVEL {
            return Err(Error::domain(format!(
                "placeholder of a level-{level} node at level {target}"
            )));
        }
        Ok(self.suffix_ones(target - level))
    }

    #[inline]
    fn suffix_ones(self, triples: u8) -> Self {
        let shift = 3 * triples as u32;
        if shift == 0 {
            return self;
        }
        MortonCode((self.0 << shift) | ((1u64 << shift) - 1))
    }

    pub fn parent(self) -> Result<Self> {
        if self.0 == 1 {
            return Err(Error::NoParent(self));
        }
        Ok(MortonCode(self.0 >> 3))
    }

    /// Parent without the root check; callers guarantee `level() >= 1`.
    #[inline]
    pub(crate) fn parent_unchecked(self) -> Self {
        debug_assert!(self.0 > 1);
        MortonCode(self.0 >> 3)
    }

    pub fn child(self, octant: u8) -> Result<Self> {
        if octant > 7 {
            return Err(Error::domain(format!("octant {octant} out of range")));
        }
        if self.level() >= MAX_LEVEL {
            return Err(Error::domain("no children below the deepest level"));
        }
        Ok(MortonCode((self.0 << 3) | octant as u64))
    }

    /// Octant of this node within its parent.
    #[inline]
    pub fn octant(self) -> u8 {
        (self.0 & 7) as u8
    }

    /// Ancestor at `level`; the code itself when the levels match.
    pub fn ancestor_at(self, level: u8) -> Result<Self> {
        let own = self.level();
        if level > own {
            return Err(Error::domain(format!("level {level} is below the node's level {own}")));
        }
        Ok(MortonCode(self.0 >> (3 * (own - level) as u32)))
    }

    /// True when `self` is `other` or one of its ancestors.
    #[inline]
    pub fn contains(self, other: MortonCode) -> bool {
        let (a, b) = (self.level(), other.level());
        a <= b && other.0 >> (3 * (b - a) as u32) == self.0
    }

    /// True when `self` is a strict ancestor of `other`.
    #[inline]
    pub fn is_ancestor_of(self, other: MortonCode) -> bool {
        self != other && self.contains(other)
    }
}

impl fmt::Debug for MortonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MortonCode({:#b})", self.0)
    }
}

/// Binary with the prefix bit, so the level can be read off the width.
impl fmt::Display for MortonCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:b}", self.0)
    }
}
