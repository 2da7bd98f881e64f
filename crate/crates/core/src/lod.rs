//! Splat payloads: parent subsampling and projected node size.

use nalgebra::{Point3, Vector3};

use crate::camera::Camera;
use crate::error::{Error, Result};
use crate::morton::MortonCode;

/// Size of one splat in the little-endian wire and file layouts:
/// center, tangent u and tangent v as f32 triples, then RGB bytes.
pub const SPLAT_BYTES: usize = 39;

const DEFAULT_COLOR: [u8; 3] = [200, 200, 200];

/// A surface sample: center plus two tangent vectors spanning its disk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Splat {
    pub center: [f32; 3],
    pub tangent_u: [f32; 3],
    pub tangent_v: [f32; 3],
    pub color: [u8; 3],
}

impl Splat {
    /// Splat for a raw point. Without a normal the disk lies in the XY plane.
    pub fn from_point(position: [f32; 3], normal: Option<[f32; 3]>, color: Option<[u8; 3]>, radius: f32) -> Self {
        let (u, v) = tangent_frame(normal);
        Splat {
            center: position,
            tangent_u: (u * radius).into(),
            tangent_v: (v * radius).into(),
            color: color.unwrap_or(DEFAULT_COLOR),
        }
    }

    /// Disk area, pi * |u| * |v|.
    pub fn area(&self) -> f64 {
        let n = |t: [f32; 3]| Vector3::new(t[0] as f64, t[1] as f64, t[2] as f64).norm();
        std::f64::consts::PI * n(self.tangent_u) * n(self.tangent_v)
    }

    fn scaled(&self, factor: f32) -> Self {
        let s = |t: [f32; 3]| [t[0] * factor, t[1] * factor, t[2] * factor];
        Splat {
            tangent_u: s(self.tangent_u),
            tangent_v: s(self.tangent_v),
            ..*self
        }
    }

    pub fn write_le(&self, out: &mut Vec<u8>) {
        for t in [self.center, self.tangent_u, self.tangent_v] {
            for c in t {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.color);
    }

    /// Reads one splat from the first `SPLAT_BYTES` of `bytes`.
    pub fn read_le(bytes: &[u8]) -> Self {
        let f = |i: usize| f32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        Splat {
            center: [f(0), f(1), f(2)],
            tangent_u: [f(3), f(4), f(5)],
            tangent_v: [f(6), f(7), f(8)],
            color: [bytes[36], bytes[37], bytes[38]],
        }
    }
}

/// Default splat radius for clouds without size information: half a deepest cell.
pub fn default_radius(l_max: u8) -> f32 {
    0.5 / (1u64 << l_max) as f32
}

fn tangent_frame(normal: Option<[f32; 3]>) -> (Vector3<f32>, Vector3<f32>) {
    let n = normal
        .map(|n| Vector3::new(n[0], n[1], n[2]))
        .filter(|n| n.iter().all(|c| c.is_finite()) && n.norm() > 1e-12)
        .map(|n| n.normalize());
    match n {
        None => (Vector3::x(), Vector3::y()),
        Some(n) => {
            // Cross with the axis least aligned with n.
            let a = n.iamin();
            let mut axis = Vector3::zeros();
            axis[a] = 1.0;
            let u = n.cross(&axis).normalize();
            (u, n.cross(&u))
        }
    }
}

/// Splat count retained by a parent whose children hold `n` splats.
pub fn parent_splat_count(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).round() as usize).clamp(1, n.max(1))
}

/// Picks the parent's splats from its children's, taken in child order.
///
/// Selection is a fixed stride over the concatenation; tangents grow by the
/// inverse cube root of the kept fraction so the summed disk area shrinks
/// only mildly.
pub fn subsample_for_parent(children: &[&[Splat]], ratio: f64) -> Result<Vec<Splat>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::domain(format!("parent point ratio {ratio} outside (0, 1]")));
    }
    let n: usize = children.iter().map(|c| c.len()).sum();
    if n == 0 {
        return Err(Error::domain("cannot subsample an empty splat set"));
    }
    let keep = parent_splat_count(n, ratio);
    let factor = (n as f64 / keep as f64).cbrt() as f32;
    let mut out = Vec::with_capacity(keep);
    let mut group = 0;
    let mut offset = 0;
    for i in 0..keep {
        let idx = i * n / keep;
        while idx >= offset + children[group].len() {
            offset += children[group].len();
            group += 1;
        }
        let s = &children[group][idx - offset];
        out.push(if keep == n { *s } else { s.scaled(factor) });
    }
    Ok(out)
}

/// Center and circumscribed-sphere radius of a node's cell in the unit cube.
pub fn cell_sphere(code: MortonCode) -> (Point3<f64>, f64) {
    let c = code.decode();
    let size = 1.0 / (1u64 << c.level) as f64;
    let center = Point3::new(
        (c.x as f64 + 0.5) * size,
        (c.y as f64 + 0.5) * size,
        (c.z as f64 + 0.5) * size,
    );
    (center, size * 3f64.sqrt() / 2.0)
}

/// Screen diameter in pixels of the sphere enclosing the node's cell.
///
/// Infinite when the eye is inside the sphere and zero when the sphere lies
/// entirely behind the eye.
pub fn projected_extent(code: MortonCode, cam: &Camera) -> f64 {
    let (center, radius) = cell_sphere(code);
    sphere_extent(&center, radius, cam)
}

pub(crate) fn sphere_extent(center: &Point3<f64>, radius: f64, cam: &Camera) -> f64 {
    let v = cam.to_view(center);
    let d2 = v.norm_squared();
    if d2 <= radius * radius {
        return f64::INFINITY;
    }
    if -v.z + radius <= 0.0 {
        return 0.0;
    }
    2.0 * cam.focal_pixels() * radius / (d2 - radius * radius).sqrt()
}
