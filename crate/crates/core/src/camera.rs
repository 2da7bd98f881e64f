//! Pinhole camera used for projected-size decisions and frustum culling.

use nalgebra::{Point3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};

/// A perspective camera. In camera space the view direction is -Z and +Y is up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub position: Point3<f64>,
    /// Rotation from camera space to model space.
    pub orientation: UnitQuaternion<f64>,
    pub vertical_fov_degrees: f64,
    pub viewport_width: u32,
    pub viewport_height: u32,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn new(
        position: Point3<f64>,
        orientation: UnitQuaternion<f64>,
        vertical_fov_degrees: f64,
        viewport: (u32, u32),
        near: f64,
        far: f64,
    ) -> Result<Self> {
        let cam = Camera {
            position,
            orientation,
            vertical_fov_degrees,
            viewport_width: viewport.0,
            viewport_height: viewport.1,
            near,
            far,
        };
        cam.check()?;
        Ok(cam)
    }

    /// Camera at `eye` looking at `target`.
    pub fn look_at(
        eye: Point3<f64>,
        target: Point3<f64>,
        up: Vector3<f64>,
        vertical_fov_degrees: f64,
        viewport: (u32, u32),
    ) -> Result<Self> {
        let dir = target - eye;
        if dir.norm() == 0.0 {
            return Err(Error::Config("camera target coincides with the eye".into()));
        }
        // face_towards maps +Z onto `dir`; the camera looks down -Z, so aim +Z away.
        let orientation = UnitQuaternion::face_towards(&-dir, &up);
        let far = (dir.norm() + 4.0).max(10.0) * 4.0;
        Self::new(eye, orientation, vertical_fov_degrees, viewport, 1e-3, far)
    }

    pub fn check(&self) -> Result<()> {
        let finite =
            self.position.iter().all(|v| v.is_finite()) && self.orientation.coords.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("camera pose is not finite".into()));
        }
        if !(self.near > 0.0 && self.far > self.near) {
            return Err(Error::Config(format!(
                "camera planes must satisfy 0 < near < far (near {}, far {})",
                self.near, self.far
            )));
        }
        if self.viewport_width == 0 || self.viewport_height == 0 {
            return Err(Error::Config("viewport dimensions must be at least 1".into()));
        }
        if !(self.vertical_fov_degrees > 0.0 && self.vertical_fov_degrees < 180.0) {
            return Err(Error::Config(format!(
                "vertical field of view {} is outside (0, 180)",
                self.vertical_fov_degrees
            )));
        }
        Ok(())
    }

    /// Model-space point expressed in camera space.
    pub fn to_view(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.orientation.inverse_transform_vector(&(p - self.position))
    }

    /// Focal length in pixels for the vertical axis.
    pub fn focal_pixels(&self) -> f64 {
        let half = self.vertical_fov_degrees.to_radians() / 2.0;
        self.viewport_height as f64 / 2.0 / half.tan()
    }

    pub fn aspect(&self) -> f64 {
        self.viewport_width as f64 / self.viewport_height as f64
    }

    /// Conservative sphere/frustum overlap test.
    pub fn sphere_visible(&self, center: &Point3<f64>, radius: f64) -> bool {
        let v = self.to_view(center);
        let depth = -v.z;
        if depth + radius < self.near || depth - radius > self.far {
            return false;
        }
        let half_v = self.vertical_fov_degrees.to_radians() / 2.0;
        let half_h = (half_v.tan() * self.aspect()).atan();
        let (sv, cv) = half_v.sin_cos();
        let (sh, ch) = half_h.sin_cos();
        // Outward normals of the four side planes through the eye.
        let planes = [
            Vector3::new(0.0, cv, sv),
            Vector3::new(0.0, -cv, sv),
            Vector3::new(ch, 0.0, sh),
            Vector3::new(-ch, 0.0, sh),
        ];
        planes.iter().all(|n| n.dot(&v) <= radius)
    }
}
