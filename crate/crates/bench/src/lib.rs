//! Inputs shared by the benchmarks.

use std::sync::Arc;

use cutfront::sorter::{assign_codes, sort_records};
use cutfront::synthetic::surface_cloud;
use cutfront::{build_sorted, BuildConfig, Camera, Node, Point3, PointRecord, Vector3};

/// Codes for a scanned-surface cloud, in input order.
pub fn unsorted(points: usize, sort_level: u8) -> Vec<PointRecord> {
    assign_codes(&surface_cloud(points, 42), sort_level).expect("synthetic points are finite")
}

pub fn sorted(points: usize, sort_level: u8) -> Vec<PointRecord> {
    let mut records = unsorted(points, sort_level);
    sort_records(&mut records);
    records
}

pub fn hierarchy(points: usize, l_max: u8) -> Arc<Node> {
    let config = BuildConfig {
        l_max,
        ..BuildConfig::default()
    };
    build_sorted(&sorted(points, 10), config, 1 << 15).expect("valid build")
}

/// A viewer close enough to the cloud that the front refines several levels.
pub fn close_camera() -> Camera {
    Camera::look_at(
        Point3::new(0.5, 0.7, 1.6),
        Point3::new(0.5, 0.5, 0.5),
        Vector3::y(),
        60.0,
        (1280, 720),
    )
    .expect("camera is well formed")
}
