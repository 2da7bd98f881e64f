//! Seeded synthetic clouds for tests, benchmarks and demos.

use std::f32::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::sorter::RawPoint;

/// Points drawn uniformly from the unit cube, without attributes.
pub fn uniform_cloud(n: usize, seed: u64) -> Vec<RawPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| RawPoint::at([rng.gen(), rng.gen(), rng.gen()]))
        .collect()
}

/// A scanned-object stand-in: a sphere resting on a wavy ground sheet,
/// with normals and colors. Surface samples leave most cells empty and
/// produce many sibling-less leaves, like real scans.
pub fn surface_cloud(n: usize, seed: u64) -> Vec<RawPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            if rng.gen_bool(0.6) {
                // Sphere of radius 0.3 centered at (0.5, 0.5, 0.6).
                let z: f32 = rng.gen_range(-1.0..1.0);
                let a: f32 = rng.gen_range(0.0..TAU);
                let r = (1.0 - z * z).sqrt();
                let n = [r * a.cos(), r * a.sin(), z];
                RawPoint {
                    position: [0.5 + 0.3 * n[0], 0.5 + 0.3 * n[1], 0.6 + 0.3 * n[2]],
                    normal: Some(n),
                    color: Some([200, (100.0 + 100.0 * z) as u8, 60]),
                }
            } else {
                let x: f32 = rng.gen();
                let y: f32 = rng.gen();
                let h = 0.15 + 0.05 * (x * 9.0).sin() * (y * 7.0).cos();
                RawPoint {
                    position: [x, y, h],
                    normal: Some([0.0, 0.0, 1.0]),
                    color: Some([90, 140, (255.0 * h) as u8]),
                }
            }
        })
        .collect()
}
