//! Streaming point-cloud level of detail.
//!
//! Points arrive in Morton order and are turned into an octree bottom-up
//! while it is being rendered. The [`ObliqueCut`] holds the partially built
//! hierarchy, the [`Builder`] drives it with a thread pool and hands off
//! finished nodes through a [`SharedHierarchy`], and each [`Front`] keeps a
//! camera-dependent set of renderable nodes over whatever has been handed
//! off so far.

pub mod builder;
pub mod camera;
pub mod cut;
pub mod error;
pub mod front;
pub mod lod;
pub mod morton;
pub mod persist;
pub mod publish;
pub mod sorter;
pub mod synthetic;

pub use builder::{build_sorted, BuildConfig, BuildStats, Builder, StreamingBuild};
pub use camera::Camera;
pub use cut::{FixPass, InvariantReport, Node, ObliqueCut, ParentPolicy};
pub use error::{Error, Result};
pub use front::{Evaluation, Front, FrontConfig, FrontEntry, FrontReport, FrontStats};
pub use lod::Splat;
pub use morton::{GridCoords, MortonCode, MAX_LEVEL};
pub use publish::{Progress, SafeWatermark, SharedHierarchy};
pub use sorter::{PointRecord, RawPoint};

/// Re-exported so downstream crates build cameras without naming nalgebra.
pub use nalgebra::{Point3, Quaternion, UnitQuaternion, Vector3};
