use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole camera with a world-to-camera pose. Pixel `(x, y)` has its centre
/// at integer coordinates; the image plane spans `[0, width-1] x [0, height-1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub id: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub qw: f64,
    pub qx: f64,
    pub qy: f64,
    pub qz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl CameraView {
    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::InvalidCamera { id: self.id, reason });
        let norm = (self.qw * self.qw + self.qx * self.qx + self.qy * self.qy + self.qz * self.qz).sqrt();
        if !((norm - 1.0).abs() <= 1e-6) {
            return bad(format!("quaternion norm {norm}"));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return bad(format!("focal lengths {} {}", self.fx, self.fy));
        }
        if self.width == 0 || self.height == 0 {
            return bad("zero-sized image".into());
        }
        if !(self.cx > 0.0 && self.cx < self.width as f64 && self.cy > 0.0 && self.cy < self.height as f64) {
            return bad(format!("principal point ({}, {}) outside image", self.cx, self.cy));
        }
        if ![self.tx, self.ty, self.tz].iter().all(|v| v.is_finite()) {
            return bad("non-finite translation".into());
        }
        Ok(())
    }

    /// Builds a camera at `eye` looking at `target`, with image `up` roughly
    /// along `-y` in camera space (x right, y down, z forward).
    pub fn look_at(
        id: u32,
        eye: Vector3<f64>,
        target: Vector3<f64>,
        world_up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&world_up).normalize();
        let down = forward.cross(&right);
        // Rows of the world-to-camera rotation are the camera axes in world space.
        let rot = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(rot));
        let t = -(rot * eye);
        let q = q.quaternion();
        // Canonical sign keeps serialised poses stable.
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        Self {
            id,
            fx: focal,
            fy: focal,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
            width,
            height,
            qw: s * q.w,
            qx: s * q.i,
            qy: s * q.j,
            qz: s * q.k,
            tx: t.x,
            ty: t.y,
            tz: t.z,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        quat_to_matrix([self.qw, self.qx, self.qy, self.qz])
    }

    pub fn translation(&self) -> Vector3<f64> {
        Vector3::new(self.tx, self.ty, self.tz)
    }

    pub fn world_to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p + self.translation()
    }

    /// Camera centre in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation().transpose() * self.translation())
    }

    /// Projects a camera-space point; `None` behind the camera.
    pub fn project_camera_point(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        if p.z <= 0.0 {
            return None;
        }
        Some([self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy])
    }

    /// World point to `(pixel, view depth)`.
    pub fn project(&self, world: &Vector3<f64>) -> Option<([f64; 2], f64)> {
        let p = self.world_to_camera(world);
        self.project_camera_point(&p).map(|uv| (uv, p.z))
    }

    pub fn in_frame(&self, uv: [f64; 2]) -> bool {
        uv[0] >= 0.0 && uv[1] >= 0.0 && uv[0] <= (self.width - 1) as f64 && uv[1] <= (self.height - 1) as f64
    }

    /// Same intrinsics and pose at a different resolution (scales focal and
    /// principal point).
    pub fn rescaled(&self, width: usize, height: usize) -> Self {
        let sx = width as f64 / self.width as f64;
        let sy = height as f64 / self.height as f64;
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5,
            cy: (self.cy + 0.5) * sy - 0.5,
            width,
            height,
            ..self.clone()
        }
    }
}

/// Rotation matrix of a (not necessarily unit) quaternion `[w, x, y, z]`,
/// normalised first.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::identity_camera;
    use approx::assert_relative_eq;

    #[test]
    fn on_axis_projection() {
        let cam = identity_camera(100, 100, 80.0);
        let (uv, z) = cam.project(&Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(uv, [50.0, 50.0]);
        assert_eq!(z, 2.0);
    }

    #[test]
    fn look_at_points_forward() {
        let eye = Vector3::new(3.0, 0.0, 2.0);
        let cam = CameraView::look_at(1, eye, Vector3::zeros(), Vector3::z(), 60.0, 64, 48);
        cam.validate().unwrap();
        assert_relative_eq!(cam.center(), eye, epsilon = 1e-12);
        let (uv, z) = cam.project(&Vector3::zeros()).unwrap();
        assert_relative_eq!(uv[0], cam.cx, epsilon = 1e-9);
        assert_relative_eq!(uv[1], cam.cy, epsilon = 1e-9);
        assert_relative_eq!(z, eye.norm(), epsilon = 1e-12);
        // world up appears above the centre (smaller y)
        let (uv_up, _) = cam.project(&Vector3::new(0.0, 0.0, 0.5)).unwrap();
        assert!(uv_up[1] < cam.cy);
    }

    #[test]
    fn validation_catches_bad_intrinsics() {
        let mut cam = identity_camera(10, 10, 5.0);
        cam.validate().unwrap();
        cam.qw = 0.9;
        assert!(cam.validate().is_err());
        let mut cam = identity_camera(10, 10, 5.0);
        cam.cx = 10.0;
        assert!(cam.validate().is_err());
        let mut cam = identity_camera(10, 10, 5.0);
        cam.fy = 0.0;
        assert!(cam.validate().is_err());
    }
}
