//! Shared helpers: an independent top-down octree and random clouds.
#![allow(dead_code)]

pub mod sequences;

use std::collections::BTreeMap;
use std::sync::Arc;

use cutfront::sorter::{assign_codes, sort_records};
use cutfront::{Camera, MortonCode, Node, Point3, PointRecord, RawPoint, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reference node: code bits, splat count and, for leaves, point centers.
#[derive(Debug, Clone, PartialEq)]
pub struct RefNode {
    pub bits: u64,
    pub splats: usize,
    pub centers: Vec<[f32; 3]>,
    pub children: Vec<RefNode>,
}

/// Cell index of `c` among `2^level` cells, clamping the far face.
fn cell(c: f32, level: u8) -> u64 {
    let cells = 1u64 << level;
    ((c as f64 * cells as f64).floor().max(0.0) as u64).min(cells - 1)
}

/// Prefix bit followed by one (z, y, x) bit triple per level, built one bit
/// at a time from the top.
pub fn naive_code(x: u64, y: u64, z: u64, level: u8) -> u64 {
    let mut bits = 1u64;
    for l in (0..level).rev() {
        let t = ((z >> l) & 1) << 2 | ((y >> l) & 1) << 1 | ((x >> l) & 1);
        bits = bits << 3 | t;
    }
    bits
}

/// Splats a parent keeps out of `n`.
pub fn kept(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Top-down octree over `points`: every occupied cell down to `l_max`.
/// Leaves hold their points ordered by their cell code at `sort_level`,
/// then by input position.
pub fn reference_octree(points: &[RawPoint], l_max: u8, sort_level: u8, ratio: f64) -> RefNode {
    let key = |i: usize| {
        let p = points[i].position;
        let c = |v: f32| cell(v, sort_level);
        (naive_code(c(p[0]), c(p[1]), c(p[2]), sort_level), i)
    };
    let mut all: Vec<usize> = (0..points.len()).collect();
    all.sort_by_key(|&i| key(i));
    subdivide(points, &all, 0, 0, 0, 0, l_max, ratio)
}

#[allow(clippy::too_many_arguments)]
fn subdivide(
    points: &[RawPoint],
    members: &[usize],
    x: u64,
    y: u64,
    z: u64,
    level: u8,
    l_max: u8,
    ratio: f64,
) -> RefNode {
    let bits = naive_code(x, y, z, level);
    if level == l_max {
        return RefNode {
            bits,
            splats: members.len(),
            centers: members.iter().map(|&i| points[i].position).collect(),
            children: Vec::new(),
        };
    }
    let mut octants: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for &i in members {
        let p = points[i].position;
        let (cx, cy, cz) = (cell(p[0], level + 1), cell(p[1], level + 1), cell(p[2], level + 1));
        let octant = (cz & 1) << 2 | (cy & 1) << 1 | (cx & 1);
        octants.entry(octant).or_default().push(i);
    }
    let children: Vec<RefNode> = octants
        .into_iter()
        .map(|(o, m)| {
            subdivide(
                points,
                &m,
                2 * x + (o & 1),
                2 * y + (o >> 1 & 1),
                2 * z + (o >> 2),
                level + 1,
                l_max,
                ratio,
            )
        })
        .collect();
    let n: usize = children.iter().map(|c| c.splats).sum();
    RefNode {
        bits,
        splats: kept(n, ratio),
        centers: Vec::new(),
        children,
    }
}

/// Folds sibling-less deepest leaves into their parents and recounts the
/// splats of every node above.
pub fn collapse_reference(mut node: RefNode, l_max: u8, ratio: f64) -> RefNode {
    let level = (63 - node.bits.leading_zeros()) / 3;
    if level as u8 + 1 == l_max && node.children.len() == 1 && node.children[0].children.is_empty() {
        let only = node.children.pop().unwrap();
        return RefNode {
            bits: node.bits,
            splats: only.splats,
            centers: only.centers,
            children: Vec::new(),
        };
    }
    if node.children.is_empty() {
        return node;
    }
    node.children = node
        .children
        .into_iter()
        .map(|c| collapse_reference(c, l_max, ratio))
        .collect();
    node.splats = kept(node.children.iter().map(|c| c.splats).sum(), ratio);
    node
}

/// First structural difference between a built tree and the reference.
pub fn diff(built: &Node, reference: &RefNode) -> Option<String> {
    if built.code.bits() != reference.bits {
        return Some(format!("code {:#b} vs {:#b}", built.code.bits(), reference.bits));
    }
    if built.is_placeholder {
        return Some(format!("placeholder {} survived", built.code));
    }
    if built.splats.len() != reference.splats {
        return Some(format!(
            "{}: {} splats vs {}",
            built.code,
            built.splats.len(),
            reference.splats
        ));
    }
    if built.children.is_empty() {
        let centers: Vec<[f32; 3]> = built.splats.iter().map(|s| s.center).collect();
        if centers != reference.centers {
            return Some(format!("{}: leaf points differ", built.code));
        }
    }
    if built.children.len() != reference.children.len() {
        return Some(format!(
            "{}: {} children vs {}",
            built.code,
            built.children.len(),
            reference.children.len()
        ));
    }
    built
        .children
        .iter()
        .zip(&reference.children)
        .find_map(|(b, r)| diff(b, r))
}

pub fn random_cloud(rng: &mut impl Rng, n: usize) -> Vec<RawPoint> {
    // Mix uniform points with a tight cluster so some cells repeat.
    (0..n)
        .map(|i| {
            if i % 4 == 0 {
                let c: f32 = rng.gen_range(0.2..0.21);
                RawPoint::at([c, rng.gen_range(0.6..0.61), c])
            } else {
                RawPoint::at([rng.gen(), rng.gen(), rng.gen()])
            }
        })
        .collect()
}

pub fn sorted_records(points: &[RawPoint], sort_level: u8) -> Vec<PointRecord> {
    let mut r = assign_codes(points, sort_level).unwrap();
    sort_records(&mut r);
    r
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn camera(eye: [f64; 3], target: [f64; 3]) -> Camera {
    Camera::look_at(
        Point3::new(eye[0], eye[1], eye[2]),
        Point3::new(target[0], target[1], target[2]),
        Vector3::y(),
        60.0,
        (800, 600),
    )
    .unwrap()
}

pub fn random_camera(rng: &mut impl Rng) -> Camera {
    let d: f64 = rng.gen_range(0.3..50.0);
    let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let h: f64 = rng.gen_range(-0.9..0.9);
    let r = (1.0 - h * h).sqrt();
    camera(
        [0.5 + d * r * a.cos(), 0.5 + d * h, 0.5 + d * r * a.sin()],
        [rng.gen(), rng.gen(), rng.gen()],
    )
}

/// Every node of a tree by code.
pub fn index(root: &Arc<Node>) -> BTreeMap<MortonCode, Arc<Node>> {
    root.breadth_first().into_iter().map(|n| (n.code, n)).collect()
}
