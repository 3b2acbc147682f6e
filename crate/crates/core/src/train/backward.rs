//! Analytic gradients of the weighted photometric loss through the
//! rasteriser, the projection and the splat parameterisation.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};

use super::loss::{loss_and_grad, LossWeights};
use super::ssim::GaussianWindow;
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::render::project::perspective_jacobian;
use crate::render::raster::{pixel_contributions, prepare, shade_prepared, Contribution};
use crate::render::{sh, Projected2D, RenderOutput};
use crate::scene::{CameraView, GaussianCloud, ImageBuffer, MaskMap, ParamLayout, Splat};

/// Per-splat loss gradients in the flat [`ParamLayout`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layout: ParamLayout,
    pub params: Vec<f64>,
    /// Norm of the screen-space mean gradient in normalised device units.
    pub screen: Vec<f64>,
    /// Whether the splat survived culling for this view.
    pub visible: Vec<bool>,
}

impl GradientSet {
    pub fn zeros(layout: ParamLayout, n: usize) -> Self {
        GradientSet {
            layout,
            params: vec![0.0; n * layout.stride()],
            screen: vec![0.0; n],
            visible: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.screen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.screen.is_empty()
    }

    pub fn splat(&self, i: usize) -> &[f64] {
        let s = self.layout.stride();
        &self.params[i * s..(i + 1) * s]
    }

    pub fn norm(&self) -> f64 {
        self.params.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

pub struct BackwardOutput {
    pub loss: f64,
    pub grads: GradientSet,
    pub render: RenderOutput,
}

/// Screen-space partials accumulated for one projected splat.
#[derive(Debug, Clone, Copy, Default)]
struct ScreenGrad {
    mean2d: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: [f64; 3],
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for k in 0..2 {
            self.mean2d[k] += o.mean2d[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Back-to-front pass over one pixel's contributors.
fn pixel_backward(
    projected: &[Projected2D],
    contribs: &[Contribution],
    grad_color: [f64; 3],
    background: [f64; 3],
    acc: &mut [ScreenGrad],
) {
    let mut behind = background;
    for c in contribs.iter().rev() {
        let p = &projected[c.slot];
        let g = &mut acc[c.rank];
        let w = c.alpha * c.transmittance;
        let mut d_alpha = 0.0;
        for ch in 0..3 {
            g.color[ch] += w * grad_color[ch];
            d_alpha += grad_color[ch] * (p.color[ch] - behind[ch]);
            behind[ch] = p.color[ch] * c.alpha + (1.0 - c.alpha) * behind[ch];
        }
        d_alpha *= c.transmittance;
        g.opacity += d_alpha * c.gauss;
        let dg = d_alpha * p.opacity * c.gauss;
        let [a, b, cc] = p.conic;
        g.mean2d[0] += dg * (a * c.dx + b * c.dy);
        g.mean2d[1] += dg * (b * c.dx + cc * c.dy);
        g.conic[0] += dg * (-0.5 * c.dx * c.dx);
        g.conic[1] += dg * (-c.dx * c.dy);
        g.conic[2] += dg * (-0.5 * c.dy * c.dy);
    }
}

/// Derivatives of the rotation matrix entries with respect to the
/// normalised quaternion components `[w, x, y, z]`.
fn rotation_partials(q: [f64; 4]) -> [Matrix3<f64>; 4] {
    let [w, x, y, z] = q;
    [
        Matrix3::new(0.0, -2.0 * z, 2.0 * y, 2.0 * z, 0.0, -2.0 * x, -2.0 * y, 2.0 * x, 0.0),
        Matrix3::new(0.0, 2.0 * y, 2.0 * z, 2.0 * y, -4.0 * x, -2.0 * w, 2.0 * z, 2.0 * w, -4.0 * x),
        Matrix3::new(-4.0 * y, 2.0 * x, 2.0 * w, 2.0 * x, 0.0, 2.0 * z, -2.0 * w, 2.0 * z, -4.0 * y),
        Matrix3::new(-4.0 * z, -2.0 * w, 2.0 * x, 2.0 * w, -4.0 * z, 2.0 * y, 2.0 * x, 2.0 * y, 0.0),
    ]
}

/// Chains screen-space partials back to one splat's parameters.
fn splat_backward(
    splat: &Splat,
    sh_degree: usize,
    camera: &CameraView,
    proj: &Projected2D,
    sg: &ScreenGrad,
    row: &mut [f64],
) {
    let w = camera.rotation();
    let mean = splat.mean_vec();
    let p = w * mean + camera.translation();
    let j = perspective_jacobian(camera, &p);

    // opacity
    let o = proj.opacity;
    row[ParamLayout::OPACITY] = sg.opacity * o * (1.0 - o);

    // conic -> 2D covariance
    let [ca, cb, cc] = proj.conic;
    let q = Matrix2::new(ca, cb, cb, cc);
    let gq = Matrix2::new(sg.conic[0], 0.5 * sg.conic[1], 0.5 * sg.conic[1], sg.conic[2]);
    let h = -(q * gq * q);

    // 2D covariance -> camera covariance and Jacobian
    let rot = splat.rotation_matrix();
    let s = splat.scale();
    let m = rot * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    let sigma = m * m.transpose();
    let sigma_cam = w * sigma * w.transpose();
    let d_sigma_cam = j.transpose() * h * j;
    let d_j: Matrix2x3<f64> = 2.0 * h * j * sigma_cam;

    // camera covariance -> world covariance -> M = R S
    let d_sigma = w.transpose() * d_sigma_cam * w;
    let d_m = 2.0 * d_sigma * m;
    let rt_dm = rot.transpose() * d_m;
    for k in 0..3 {
        row[ParamLayout::SCALE + k] = rt_dm[(k, k)] * s[k];
    }
    let d_rot = d_m * Matrix3::from_diagonal(&Vector3::new(s[0], s[1], s[2]));
    let qn = splat.rotation;
    let norm = qn.iter().map(|v| v * v).sum::<f64>().sqrt();
    let qh = qn.map(|v| v / norm);
    let partials = rotation_partials(qh);
    let g_hat: [f64; 4] = std::array::from_fn(|k| d_rot.component_mul(&partials[k]).sum());
    let dot: f64 = (0..4).map(|k| g_hat[k] * qh[k]).sum();
    for k in 0..4 {
        row[ParamLayout::ROTATION + k] = (g_hat[k] - qh[k] * dot) / norm;
    }

    // camera-space position: via the projected mean and via the Jacobian
    let mut d_p = j.transpose() * nalgebra::Vector2::new(sg.mean2d[0], sg.mean2d[1]);
    let (fx, fy) = (camera.fx, camera.fy);
    let iz2 = 1.0 / (p.z * p.z);
    let iz3 = iz2 / p.z;
    d_p.x += d_j[(0, 2)] * (-fx * iz2);
    d_p.y += d_j[(1, 2)] * (-fy * iz2);
    d_p.z += d_j[(0, 0)] * (-fx * iz2)
        + d_j[(0, 2)] * (2.0 * fx * p.x * iz3)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(1, 2)] * (2.0 * fy * p.y * iz3);
    let mut d_mean = w.transpose() * d_p;

    // view-dependent colour
    let gcol: [f64; 3] = std::array::from_fn(|ch| if proj.clamped[ch] { 0.0 } else { sg.color[ch] });
    let v = mean - camera.center();
    let vn = v.norm();
    let dir = v / vn;
    let dir_a = [dir.x, dir.y, dir.z];
    let basis = sh::basis(sh_degree, dir_a);
    for (k, b) in basis.iter().take(splat.sh.len()).enumerate() {
        for ch in 0..3 {
            row[ParamLayout::SH + 3 * k + ch] = gcol[ch] * b;
        }
    }
    if sh_degree > 0 {
        let bg = sh::basis_grad(sh_degree, dir_a);
        let mut d_dir = Vector3::zeros();
        for (k, coef) in splat.sh.iter().enumerate().skip(1) {
            let gk: f64 = (0..3).map(|ch| gcol[ch] * coef[ch]).sum();
            d_dir += Vector3::from(bg[k]) * gk;
        }
        d_mean += (d_dir - dir * dir.dot(&d_dir)) / vn;
    }
    for k in 0..3 {
        row[ParamLayout::MEAN + k] = d_mean[k];
    }
}

/// Renders `camera`, evaluates the weighted loss against `target` and
/// returns analytic gradients for every splat.
pub fn backward(
    cloud: &GaussianCloud,
    camera: &CameraView,
    target: &ImageBuffer,
    weights: &MaskMap,
    lambda: LossWeights,
    background: [f64; 3],
) -> Result<BackwardOutput> {
    let win = GaussianWindow::new(camera.width, camera.height);
    backward_with(cloud, camera, target, weights, lambda, background, &win, Exec::default())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward_with(
    cloud: &GaussianCloud,
    camera: &CameraView,
    target: &ImageBuffer,
    weights: &MaskMap,
    lambda: LossWeights,
    background: [f64; 3],
    win: &GaussianWindow,
    exec: Exec,
) -> Result<BackwardOutput> {
    let (w, h) = (camera.width, camera.height);
    if target.dims() != (w, h) {
        return Err(Error::dims("target image", (w, h), target.dims()));
    }
    let prep = prepare(cloud, camera, exec);
    let render = shade_prepared(&prep, w, h, background, exec);
    let (loss, grad_img) = loss_and_grad(win, target, &render.color, weights, lambda)?;

    let n_tiles = prep.tiles_x * prep.tiles_y;
    let per_tile: Vec<Vec<ScreenGrad>> = par::map_range(exec, n_tiles, |tile| {
        let list = &prep.tiles[tile];
        let mut acc = vec![ScreenGrad::default(); list.len()];
        if list.is_empty() {
            return acc;
        }
        let (x0, y0, x1, y1) = prep.tile_bounds(tile, w, h);
        let mut buf = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                let k = (y * w + x) * 3;
                let gc = [grad_img[k], grad_img[k + 1], grad_img[k + 2]];
                if gc == [0.0; 3] {
                    continue;
                }
                pixel_contributions(&prep.projected, list.iter().copied(), x as f64, y as f64, &mut buf);
                pixel_backward(&prep.projected, &buf, gc, background, &mut acc);
            }
        }
        acc
    });

    let mut screen = vec![ScreenGrad::default(); prep.projected.len()];
    for (tile, acc) in per_tile.iter().enumerate() {
        for (rank, g) in acc.iter().enumerate() {
            screen[prep.tiles[tile][rank]].add(g);
        }
    }

    let layout = cloud.layout();
    let stride = layout.stride();
    let mut grads = GradientSet::zeros(layout, cloud.len());
    let rows: Vec<(usize, Vec<f64>)> = par::map_range(exec, prep.projected.len(), |slot| {
        let proj = &prep.projected[slot];
        let mut row = vec![0.0; stride];
        splat_backward(&cloud.splats[proj.id], cloud.sh_degree, camera, proj, &screen[slot], &mut row);
        (proj.id, row)
    });
    for ((id, row), sg) in rows.into_iter().zip(&screen) {
        if row.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { splat: id });
        }
        grads.params[id * stride..(id + 1) * stride].copy_from_slice(&row);
        grads.visible[id] = true;
        grads.screen[id] = ((sg.mean2d[0] * 0.5 * w as f64).powi(2) + (sg.mean2d[1] * 0.5 * h as f64).powi(2)).sqrt();
    }
    Ok(BackwardOutput { loss, grads, render })
}
