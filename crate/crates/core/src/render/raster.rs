//! Front-to-back alpha compositing of depth-sorted splats.
//!
//! The tiled rasteriser and the per-pixel reference share
//! [`pixel_contributions`], so they perform identical arithmetic in
//! identical order; tiling only skips splats whose 99% box misses a tile.

use super::project::{mahalanobis_sq, project_splat, project_unculled, Projected2D, CUTOFF_SQ};
use crate::par::{self, Exec};
use crate::scene::{CameraView, GaussianCloud, ImageBuffer, ScalarMap};

pub const TILE_SIZE: usize = 16;
/// Compositing stops once transmittance falls below this.
pub const TRANSMITTANCE_EPS: f64 = 1e-4;
/// Lower bound on accumulated alpha when normalising depth.
const DEPTH_ALPHA_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOutput {
    pub color: ImageBuffer,
    /// Alpha-normalised expected view depth; 0 where `alpha == 0`.
    pub depth: ScalarMap,
    /// Accumulated opacity `1 - T_final`.
    pub alpha: ScalarMap,
}

/// One splat's contribution to one pixel.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Contribution {
    /// Index into the sorted projection list.
    pub slot: usize,
    /// Position of the splat in the iterated order.
    pub rank: usize,
    pub alpha: f64,
    pub gauss: f64,
    /// Transmittance in front of this splat.
    pub transmittance: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Walks `order` front to back for the pixel centre `(px, py)`, pushing every
/// contributing splat into `out`, and returns the final transmittance.
#[inline]
pub(crate) fn pixel_contributions(
    projected: &[Projected2D],
    order: impl Iterator<Item = usize>,
    px: f64,
    py: f64,
    out: &mut Vec<Contribution>,
) -> f64 {
    out.clear();
    let mut t = 1.0;
    for (rank, slot) in order.enumerate() {
        let p = &projected[slot];
        let (d2, dx, dy) = mahalanobis_sq(p, px, py);
        if d2 > CUTOFF_SQ {
            continue;
        }
        let gauss = (-0.5 * d2).exp();
        let alpha = p.opacity * gauss;
        out.push(Contribution {
            slot,
            rank,
            alpha,
            gauss,
            transmittance: t,
            dx,
            dy,
        });
        t *= 1.0 - alpha;
        if t < TRANSMITTANCE_EPS {
            break;
        }
    }
    t
}

struct PixelValue {
    color: [f64; 3],
    depth: f64,
    alpha: f64,
}

#[inline]
fn shade(projected: &[Projected2D], contribs: &[Contribution], t_final: f64, background: [f64; 3]) -> PixelValue {
    let mut color = [0.0; 3];
    let mut depth = 0.0;
    for c in contribs {
        let p = &projected[c.slot];
        let w = c.alpha * c.transmittance;
        for ch in 0..3 {
            color[ch] += p.color[ch] * w;
        }
        depth += p.depth * w;
    }
    for ch in 0..3 {
        color[ch] += t_final * background[ch];
    }
    let alpha = 1.0 - t_final;
    let depth = if alpha > 0.0 { depth / alpha.max(DEPTH_ALPHA_FLOOR) } else { 0.0 };
    PixelValue { color, depth, alpha }
}

/// Projected splats sorted by `(depth, id)` plus per-tile slot lists.
pub(crate) struct Prepared {
    pub projected: Vec<Projected2D>,
    pub tiles: Vec<Vec<usize>>,
    pub tiles_x: usize,
    pub tiles_y: usize,
}

pub(crate) fn sort_front_to_back(projected: &mut [Projected2D]) {
    projected.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.id.cmp(&b.id)));
}

pub(crate) fn prepare(cloud: &GaussianCloud, camera: &CameraView, exec: Exec) -> Prepared {
    let mut projected: Vec<Projected2D> = par::map_range(exec, cloud.len(), |i| {
        project_splat(i, &cloud.splats[i], cloud.sh_degree, camera)
    })
    .into_iter()
    .flatten()
    .collect();
    sort_front_to_back(&mut projected);

    let tiles_x = camera.width.div_ceil(TILE_SIZE);
    let tiles_y = camera.height.div_ceil(TILE_SIZE);
    let mut tiles = vec![Vec::new(); tiles_x * tiles_y];
    let clamp_tile = |v: f64, n: usize| -> usize { (v.max(0.0) as usize / TILE_SIZE).min(n - 1) };
    for (slot, p) in projected.iter().enumerate() {
        // Slack keeps boundary pixels; the ellipse test is the real filter.
        let [rx, ry] = p.extent.map(|r| r + 1e-9);
        let x0 = clamp_tile((p.mean2d[0] - rx).ceil(), tiles_x);
        let x1 = clamp_tile((p.mean2d[0] + rx).floor(), tiles_x);
        let y0 = clamp_tile((p.mean2d[1] - ry).ceil(), tiles_y);
        let y1 = clamp_tile((p.mean2d[1] + ry).floor(), tiles_y);
        for ty in y0..=y1 {
            for tx in x0..=x1 {
                tiles[ty * tiles_x + tx].push(slot);
            }
        }
    }
    Prepared {
        projected,
        tiles,
        tiles_x,
        tiles_y,
    }
}

impl Prepared {
    /// Pixel rectangle `(x0, y0, x1, y1)` (exclusive ends) of a tile.
    pub fn tile_bounds(&self, tile: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * TILE_SIZE;
        let y0 = ty * TILE_SIZE;
        (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
    }
}

fn assemble(width: usize, height: usize, pixels: impl Iterator<Item = (usize, usize, PixelValue)>) -> RenderOutput {
    let mut color = ImageBuffer::new(width, height);
    let mut depth = ScalarMap::zeros(width, height);
    let mut alpha = ScalarMap::zeros(width, height);
    for (x, y, v) in pixels {
        color.set_pixel(x, y, v.color);
        depth.data[y * width + x] = v.depth;
        alpha.data[y * width + x] = v.alpha;
    }
    RenderOutput { color, depth, alpha }
}

/// Renders colour, depth and alpha with the default execution policy.
pub fn render(cloud: &GaussianCloud, camera: &CameraView, background: [f64; 3]) -> RenderOutput {
    render_with(cloud, camera, background, Exec::default())
}

/// Tiled renderer; tiles are shaded independently and assembled in tile
/// order, so the output is identical for every execution policy.
pub fn render_with(cloud: &GaussianCloud, camera: &CameraView, background: [f64; 3], exec: Exec) -> RenderOutput {
    let prep = prepare(cloud, camera, exec);
    shade_prepared(&prep, camera.width, camera.height, background, exec)
}

pub(crate) fn shade_prepared(prep: &Prepared, w: usize, h: usize, background: [f64; 3], exec: Exec) -> RenderOutput {
    let n_tiles = prep.tiles_x * prep.tiles_y;
    let shaded: Vec<Vec<(usize, usize, PixelValue)>> = par::map_range(exec, n_tiles, |tile| {
        let (x0, y0, x1, y1) = prep.tile_bounds(tile, w, h);
        let list = &prep.tiles[tile];
        let mut buf = Vec::new();
        let mut out = Vec::with_capacity((x1 - x0) * (y1 - y0));
        for y in y0..y1 {
            for x in x0..x1 {
                let t = pixel_contributions(&prep.projected, list.iter().copied(), x as f64, y as f64, &mut buf);
                out.push((x, y, shade(&prep.projected, &buf, t, background)));
            }
        }
        out
    });
    assemble(w, h, shaded.into_iter().flatten())
}

/// Reference renderer: every pixel visits every splat in front of the near
/// plane, with no frame culling and no tiling.
pub fn render_naive(cloud: &GaussianCloud, camera: &CameraView, background: [f64; 3]) -> RenderOutput {
    let mut projected: Vec<Projected2D> = cloud
        .splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| project_unculled(i, s, cloud.sh_degree, camera))
        .collect();
    sort_front_to_back(&mut projected);
    let (w, h) = (camera.width, camera.height);
    let mut buf = Vec::new();
    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let t = pixel_contributions(&projected, 0..projected.len(), x as f64, y as f64, &mut buf);
            pixels.push((x, y, shade(&projected, &buf, t, background)));
        }
    }
    assemble(w, h, pixels.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::render::sh::SH_C0;
    use crate::scene::{cloud::logit, Splat};
    use crate::test_util::{identity_camera, random_cloud};
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn solid(mean: [f64; 3], rgb: [f64; 3], opacity_logit: f64) -> Splat {
        Splat {
            mean,
            log_scale: [-1.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            opacity_logit,
            sh: vec![rgb.map(|c| (c - 0.5) / SH_C0)],
        }
    }

    #[test]
    fn empty_cloud_renders_background() {
        let cam = identity_camera(8, 8, 10.0);
        let out = render(&GaussianCloud::empty(0), &cam, [0.0; 3]);
        assert!(out.color.data.iter().all(|&v| v == 0.0));
        assert!(out.alpha.data.iter().all(|&v| v == 0.0));
        let out = render(&GaussianCloud::empty(0), &cam, [0.2, 0.3, 0.4]);
        assert_eq!(out.color.pixel(3, 3), [0.2, 0.3, 0.4]);
    }

    #[test]
    fn single_opaque_splat() {
        let cam = identity_camera(8, 8, 10.0);
        let cloud = GaussianCloud {
            sh_degree: 0,
            splats: vec![solid([0.0, 0.0, 2.0], [1.0, 0.0, 0.0], 40.0)],
        };
        let out = render(&cloud, &cam, [0.0; 3]);
        // the centre pixel sits exactly on the splat mean: G = 1, alpha = 1
        let c = out.color.pixel(4, 4);
        assert_relative_eq!(c[0], 1.0, epsilon = 1e-12);
        assert_eq!(c[1], 0.0);
        assert_relative_eq!(out.depth.get(4, 4), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn two_splat_blend() {
        let cam = identity_camera(8, 8, 10.0);
        let cloud = GaussianCloud {
            sh_degree: 0,
            splats: vec![
                solid([0.0, 0.0, 2.0], [0.0, 0.0, 1.0], 40.0),
                solid([0.0, 0.0, 1.0], [1.0, 0.0, 0.0], logit(0.5)),
            ],
        };
        let out = render(&cloud, &cam, [0.0; 3]);
        let c = out.color.pixel(4, 4);
        assert_relative_eq!(c[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(c[1], 0.0, epsilon = 1e-12);
        assert_relative_eq!(c[2], 0.5, epsilon = 1e-12);
        assert_relative_eq!(out.depth.get(4, 4), 1.5, epsilon = 1e-12);
        assert_relative_eq!(out.alpha.get(4, 4), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tiled_matches_naive_on_random_clouds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let cloud = random_cloud(&mut rng, 50, 1);
            let cam = identity_camera(40, 36, 40.0);
            let a = render(&cloud, &cam, [0.1, 0.2, 0.3]);
            let b = render_naive(&cloud, &cam, [0.1, 0.2, 0.3]);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn execution_policy_does_not_change_output() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let cloud = random_cloud(&mut rng, 80, 2);
        let cam = identity_camera(48, 40, 40.0);
        assert_eq!(
            render_with(&cloud, &cam, [0.0; 3], Exec::Sequential),
            render_with(&cloud, &cam, [0.0; 3], Exec::Parallel)
        );
    }
}
