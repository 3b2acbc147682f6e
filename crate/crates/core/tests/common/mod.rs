#![allow(dead_code)]

use rand::Rng;
use vista_core::render::project::project_unculled;
use vista_core::render::{render, sh, CUTOFF_SQ};
use vista_core::scene::{CameraView, GaussianCloud, ImageBuffer, MaskMap, Splat};
use vista_core::train::{backward, loss_weighted, LossWeights};

pub const FD_STEP: f64 = 1e-4;
/// Floor on the relative-error denominator so that partials that are zero
/// up to rounding compare on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

pub fn camera(w: usize, h: usize, f: f64) -> CameraView {
    CameraView {
        id: 0,
        fx: f,
        fy: f,
        cx: (w as f64 - 1.0) / 2.0,
        cy: (h as f64 - 1.0) / 2.0,
        width: w,
        height: h,
        qw: 0.9938,
        qx: 0.0499,
        qy: -0.0998,
        qz: 0.0,
        tx: 0.05,
        ty: -0.02,
        tz: 0.1,
    }
    .normalized()
}

trait Normalized {
    fn normalized(self) -> Self;
}

impl Normalized for CameraView {
    fn normalized(mut self) -> Self {
        let n = (self.qw * self.qw + self.qx * self.qx + self.qy * self.qy + self.qz * self.qz).sqrt();
        self.qw /= n;
        self.qx /= n;
        self.qy /= n;
        self.qz /= n;
        self
    }
}

fn random_splat(rng: &mut impl Rng, cam: &CameraView, sh_degree: usize) -> Splat {
    let z = rng.random_range(2.0..3.0);
    let mut q = [0.0; 4];
    for v in &mut q {
        *v = rng.random_range(-1.0..1.0);
    }
    let k = (sh_degree + 1) * (sh_degree + 1);
    let local = nalgebra::Vector3::new(rng.random_range(-0.15..0.15) * z, rng.random_range(-0.15..0.15) * z, z);
    let world = cam.rotation().transpose() * (local - cam.translation());
    Splat {
        mean: [world.x, world.y, world.z],
        log_scale: [(); 3].map(|_| rng.random_range(0.1f64..0.5) * z / cam.fx * 8.0).map(f64::ln),
        rotation: q,
        opacity_logit: rng.random_range(-2.0..0.5),
        sh: (0..k)
            .map(|j| {
                let s = if j == 0 { 0.6 } else { 0.15 };
                [(); 3].map(|_| rng.random_range(-s..s))
            })
            .collect(),
    }
}

/// True when no splat-pixel pair sits near a non-differentiable point:
/// the ellipse cutoff, the transmittance stop, the colour clamp, or a zero
/// of the L1 residual.
pub fn kink_free(cloud: &GaussianCloud, cam: &CameraView, target: &ImageBuffer) -> bool {
    for (i, s) in cloud.splats.iter().enumerate() {
        let Some(p) = project_unculled(i, s, cloud.sh_degree, cam) else {
            return false;
        };
        if p.clamped.iter().any(|&c| c) {
            return false;
        }
        let dir = s.mean_vec() - cam.center();
        let dir = dir / dir.norm();
        let raw = sh::eval_color(cloud.sh_degree, &s.sh, [dir.x, dir.y, dir.z]);
        if raw.iter().any(|&c| !(0.02..=0.98).contains(&c)) {
            return false;
        }
        let [a, b, c] = p.conic;
        for y in 0..cam.height {
            for x in 0..cam.width {
                let dx = x as f64 - p.mean2d[0];
                let dy = y as f64 - p.mean2d[1];
                let d2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
                if (d2 - CUTOFF_SQ).abs() < 0.5 {
                    return false;
                }
            }
        }
    }
    let out = render(cloud, cam, [0.0; 3]);
    if out.alpha.data.iter().any(|&a| 1.0 - a < 1e-3) {
        return false;
    }
    out.color.data.iter().zip(&target.data).all(|(r, t)| (r - t).abs() > 1e-3)
}

pub struct GradScene {
    pub cloud: GaussianCloud,
    pub camera: CameraView,
    pub target: ImageBuffer,
    pub weights: MaskMap,
}

/// Random ≤10-splat, 8×8 scene with no kinks near the evaluation point.
pub fn random_grad_scene(rng: &mut impl Rng) -> GradScene {
    let cam = camera(8, 8, 8.0);
    loop {
        let n = rng.random_range(1..=10);
        let sh_degree = rng.random_range(0..=2);
        let cloud = GaussianCloud {
            sh_degree,
            splats: (0..n).map(|_| random_splat(rng, &cam, sh_degree)).collect(),
        };
        let target = ImageBuffer::from_raw(8, 8, (0..192).map(|_| rng.random::<f64>()).collect()).unwrap();
        let weights = MaskMap::from_raw(8, 8, (0..64).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap();
        if kink_free(&cloud, &cam, &target) {
            return GradScene {
                cloud,
                camera: cam,
                target,
                weights,
            };
        }
    }
}

fn scene_loss(scene: &GradScene, params: &[f64]) -> f64 {
    let cloud = GaussianCloud::from_params(scene.cloud.sh_degree, params);
    let img = render(&cloud, &scene.camera, [0.0; 3]).color;
    loss_weighted(&scene.target, &img, &scene.weights, LossWeights::default()).unwrap()
}

/// Largest relative error between analytic and central-difference partials,
/// with the offending parameter index.
pub fn max_gradient_error(scene: &GradScene) -> (f64, usize) {
    let out = backward(&scene.cloud, &scene.camera, &scene.target, &scene.weights, LossWeights::default(), [0.0; 3]).unwrap();
    let params = scene.cloud.to_params();
    let mut worst = (0.0, 0);
    for k in 0..params.len() {
        let mut plus = params.clone();
        plus[k] += FD_STEP;
        let mut minus = params.clone();
        minus[k] -= FD_STEP;
        let fd = (scene_loss(scene, &plus) - scene_loss(scene, &minus)) / (2.0 * FD_STEP);
        let a = out.grads.params[k];
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(REL_FLOOR);
        if err > worst.0 {
            worst = (err, k);
        }
    }
    worst
}
