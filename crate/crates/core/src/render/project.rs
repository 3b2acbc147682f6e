//! Perspective projection of 3D Gaussians to screen-space ellipses.

use nalgebra::{Matrix2x3, Matrix3, Vector3};

use super::sh;
use crate::scene::{CameraView, Splat};

/// Splats at or closer than this view depth (metres) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Low-pass floor added to the 2D covariance diagonal, in px^2.
pub const BLUR_FLOOR: f64 = 0.3;
/// Squared Mahalanobis radius of the 99% ellipse (chi-square, 2 dof):
/// `-2 ln(0.01)`. A splat contributes only to pixels inside it.
pub const CUTOFF_SQ: f64 = 9.210_340_371_976_184;

/// Screen-space footprint of one splat.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D {
    pub id: usize,
    pub mean2d: [f64; 2],
    /// `[xx, xy, yy]` of the 2D covariance, blur floor included.
    pub cov2d: [f64; 3],
    /// Inverse of `cov2d`, same packing.
    pub conic: [f64; 3],
    pub depth: f64,
    /// SH colour clamped to `[0, 1]`.
    pub color: [f64; 3],
    /// Channels where the clamp was active (zero colour gradient).
    pub clamped: [bool; 3],
    pub opacity: f64,
    /// Half-widths of the axis-aligned box around the 99% ellipse.
    pub extent: [f64; 2],
}

/// Perspective Jacobian of `(fx x/z + cx, fy y/z + cy)` at a camera-space point.
pub(crate) fn perspective_jacobian(camera: &CameraView, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let iz = 1.0 / p.z;
    Matrix2x3::new(
        camera.fx * iz,
        0.0,
        -camera.fx * p.x * iz * iz,
        0.0,
        camera.fy * iz,
        -camera.fy * p.y * iz * iz,
    )
}

/// Projects without frame culling; `None` only for splats at or behind the
/// near plane.
pub fn project_unculled(id: usize, splat: &Splat, sh_degree: usize, camera: &CameraView) -> Option<Projected2D> {
    let w = camera.rotation();
    let mean = splat.mean_vec();
    let p = w * mean + camera.translation();
    if p.z <= NEAR_PLANE {
        return None;
    }
    let j = perspective_jacobian(camera, &p);
    let cov_cam: Matrix3<f64> = w * splat.covariance() * w.transpose();
    let c2 = j * cov_cam * j.transpose();
    let (a, b, c) = (c2[(0, 0)] + BLUR_FLOOR, 0.5 * (c2[(0, 1)] + c2[(1, 0)]), c2[(1, 1)] + BLUR_FLOOR);
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let conic = [c / det, -b / det, a / det];

    let dir = mean - camera.center();
    let dir = dir / dir.norm();
    let raw = sh::eval_color(sh_degree, &splat.sh, [dir.x, dir.y, dir.z]);
    let color = raw.map(|v| v.clamp(0.0, 1.0));
    let clamped = raw.map(|v| !(0.0..=1.0).contains(&v));

    Some(Projected2D {
        id,
        mean2d: [camera.fx * p.x / p.z + camera.cx, camera.fy * p.y / p.z + camera.cy],
        cov2d: [a, b, c],
        conic,
        depth: p.z,
        color,
        clamped,
        opacity: splat.opacity(),
        extent: [(CUTOFF_SQ * a).sqrt(), (CUTOFF_SQ * c).sqrt()],
    })
}

/// Projects a splat, culling it when it is behind the near plane or when its
/// 99% ellipse misses every pixel centre of the frame.
pub fn project_splat(id: usize, splat: &Splat, sh_degree: usize, camera: &CameraView) -> Option<Projected2D> {
    let p = project_unculled(id, splat, sh_degree, camera)?;
    let (w, h) = ((camera.width - 1) as f64, (camera.height - 1) as f64);
    let [mx, my] = p.mean2d;
    let [rx, ry] = p.extent;
    if mx + rx < 0.0 || mx - rx > w || my + ry < 0.0 || my - ry > h {
        return None;
    }
    Some(p)
}

/// Squared Mahalanobis distance of a pixel centre from the splat centre.
#[inline]
pub(crate) fn mahalanobis_sq(p: &Projected2D, px: f64, py: f64) -> (f64, f64, f64) {
    let dx = px - p.mean2d[0];
    let dy = py - p.mean2d[1];
    let [a, b, c] = p.conic;
    (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy, dx, dy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_util::identity_camera;
    use approx::assert_relative_eq;

    fn splat_at(mean: [f64; 3], log_scale: f64) -> Splat {
        Splat {
            mean,
            log_scale: [log_scale; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit: 0.0,
            sh: vec![[0.0; 3]],
        }
    }

    #[test]
    fn isotropic_on_axis_covariance() {
        // J = diag(100, 100) at depth 1, Sigma = 1e-4 I -> 1 px^2 + floor.
        let cam = identity_camera(64, 64, 100.0);
        let p = project_splat(0, &splat_at([0.0, 0.0, 1.0], 0.01f64.ln()), 0, &cam).unwrap();
        assert_relative_eq!(p.cov2d[0], 1.0 + BLUR_FLOOR, epsilon = 1e-12);
        assert_relative_eq!(p.cov2d[2], 1.0 + BLUR_FLOOR, epsilon = 1e-12);
        assert_relative_eq!(p.cov2d[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn behind_camera_is_culled() {
        let cam = identity_camera(64, 64, 100.0);
        assert!(project_splat(0, &splat_at([0.0, 0.0, -1.0], -3.0), 0, &cam).is_none());
        assert!(project_splat(0, &splat_at([0.0, 0.0, 0.005], -3.0), 0, &cam).is_none());
    }

    #[test]
    fn on_axis_mean() {
        let cam = identity_camera(100, 100, 50.0);
        let p = project_splat(0, &splat_at([0.0, 0.0, 2.0], -3.0), 0, &cam).unwrap();
        assert_eq!(p.mean2d, [50.0, 50.0]);
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn off_frame_splat_is_culled_but_unculled_projection_exists() {
        let cam = identity_camera(32, 32, 30.0);
        let s = splat_at([5.0, 0.0, 1.0], -4.0);
        assert!(project_splat(0, &s, 0, &cam).is_none());
        assert!(project_unculled(0, &s, 0, &cam).is_some());
    }
}
