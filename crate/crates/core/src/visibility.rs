//! Cross-view visibility uncertainty and its fusion with object masks.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::render::{render_with, sample_bilinear, sample_bilinear_scalar, RenderOutput};
use crate::scene::{CameraView, GaussianCloud, ImageBuffer, MaskMap, ScalarMap, SceneDataset};

/// Raw uncertainty assigned to points seen by fewer than two views.
pub const SENTINEL_UNCERTAINTY: f64 = 1.0;
/// Below this raw standard deviation the normalised map is all zero.
pub const STD_GUARD: f64 = 1e-8;

pub type UncertaintyMap = ScalarMap;

/// Where the per-view colours of a 3D point are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorSource {
    /// The captured input images.
    #[default]
    InputImages,
    /// Renders of the current cloud at each view.
    Renders,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UncertaintyConfig {
    /// Number of adjacent views.
    pub adjacent: usize,
    /// Relative depth tolerance of the occlusion test.
    pub tau_d: f64,
    /// Pixels whose rendered alpha is below this get zero raw uncertainty.
    pub min_alpha: f64,
    /// Also count the source view's own colour among the samples.
    pub include_source: bool,
    pub color_source: ColorSource,
    pub background: [f64; 3],
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        UncertaintyConfig {
            adjacent: 4,
            tau_d: 0.05,
            min_alpha: 0.5,
            include_source: true,
            color_source: ColorSource::InputImages,
            background: [0.0; 3],
        }
    }
}

impl UncertaintyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.adjacent < 2 {
            return Err(Error::InvalidConfig("at least 2 adjacent views are required".into()));
        }
        if !(self.tau_d > 0.0) {
            return Err(Error::InvalidConfig("depth tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// The `count` views whose camera centres are closest to view `i`, nearest
/// first; ties go to the lower index.
pub fn select_adjacent_views(cameras: &[CameraView], i: usize, count: usize) -> Result<Vec<usize>> {
    let available = cameras.len().saturating_sub(1);
    if count > available || i >= cameras.len() {
        return Err(Error::TooManyAdjacentViews {
            requested: count,
            available,
        });
    }
    let c = cameras[i].center();
    let mut others: Vec<(f64, usize)> = cameras
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != i)
        .map(|(j, cam)| ((cam.center() - c).norm(), j))
        .collect();
    others.sort_by(|a, b| {
        let scale = a.0.abs().max(b.0.abs()).max(1e-300);
        if (a.0 - b.0).abs() <= 1e-9 * scale {
            a.1.cmp(&b.1)
        } else {
            a.0.total_cmp(&b.0)
        }
    });
    Ok(others.into_iter().take(count).map(|(_, j)| j).collect())
}

/// World point seen at pixel `uv` with view depth `depth`.
pub fn unproject(uv: [f64; 2], depth: f64, camera: &CameraView) -> Result<Vector3<f64>> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(unproject_with(&camera.rotation(), camera, uv, depth))
}

#[inline]
fn unproject_with(rot: &Matrix3<f64>, camera: &CameraView, uv: [f64; 2], depth: f64) -> Vector3<f64> {
    let ray = Vector3::new((uv[0] - camera.cx) / camera.fx, (uv[1] - camera.cy) / camera.fy, 1.0);
    rot.transpose() * (ray * depth - camera.translation())
}

/// A candidate view for the photo-consistency test.
#[derive(Debug, Clone, Copy)]
pub struct DepthView<'a> {
    pub camera: &'a CameraView,
    pub image: &'a ImageBuffer,
    pub depth: &'a ScalarMap,
}

/// Mean over RGB of the population variance of the colours of `x` in the
/// views where it is in frame and passes the depth test, or
/// [`SENTINEL_UNCERTAINTY`] when fewer than two views qualify.
pub fn point_uncertainty(x: &Vector3<f64>, views: &[DepthView<'_>], tau_d: f64) -> f64 {
    // Welford updates keep identical samples at exactly zero variance.
    let mut n = 0usize;
    let mut mean = [0.0; 3];
    let mut m2 = [0.0; 3];
    for v in views {
        let Some((uv, z)) = v.camera.project(x) else {
            continue;
        };
        if !v.camera.in_frame(uv) {
            continue;
        }
        let d = sample_bilinear_scalar(v.depth, uv);
        if (z - d).abs() > tau_d * z {
            continue;
        }
        let c = sample_bilinear(v.image, uv);
        n += 1;
        for ch in 0..3 {
            let delta = c[ch] - mean[ch];
            mean[ch] += delta / n as f64;
            m2[ch] += delta * (c[ch] - mean[ch]);
        }
    }
    if n < 2 {
        return SENTINEL_UNCERTAINTY;
    }
    m2.iter().map(|v| v / n as f64).sum::<f64>() / 3.0
}

/// Divides a raw map by the standard deviation of its values and clamps to
/// `[0, 1]`; a near-constant map becomes all zero.
pub fn normalize_uncertainty(raw: &ScalarMap) -> UncertaintyMap {
    let n = raw.data.len() as f64;
    let mean = raw.data.iter().sum::<f64>() / n;
    let var = raw.data.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    let mut out = ScalarMap::zeros(raw.width, raw.height);
    if std < STD_GUARD {
        return out;
    }
    for (o, v) in out.data.iter_mut().zip(&raw.data) {
        *o = (v / std).clamp(0.0, 1.0);
    }
    out
}

fn raw_map(
    i: usize,
    cameras: &[CameraView],
    colors: &[&ImageBuffer],
    renders: &[RenderOutput],
    config: &UncertaintyConfig,
    exec: Exec,
) -> Result<ScalarMap> {
    let mut neighbours = select_adjacent_views(cameras, i, config.adjacent)?;
    if config.include_source {
        neighbours.insert(0, i);
    }
    let views: Vec<DepthView<'_>> = neighbours
        .iter()
        .map(|&j| DepthView {
            camera: &cameras[j],
            image: colors[j],
            depth: &renders[j].depth,
        })
        .collect();
    let cam = &cameras[i];
    let rot = cam.rotation();
    let (w, h) = (cam.width, cam.height);
    let src = &renders[i];
    let rows = par::map_range(exec, h, |y| {
        (0..w)
            .map(|x| {
                let k = y * w + x;
                if src.alpha.data[k] < config.min_alpha || !(src.depth.data[k] > 0.0) {
                    return 0.0;
                }
                let p = unproject_with(&rot, cam, [x as f64, y as f64], src.depth.data[k]);
                point_uncertainty(&p, &views, config.tau_d)
            })
            .collect::<Vec<f64>>()
    });
    Ok(ScalarMap {
        width: w,
        height: h,
        data: rows.into_iter().flatten().collect(),
    })
}

/// Normalised uncertainty maps for every view of the dataset.
pub fn uncertainty_maps(
    cloud: &GaussianCloud,
    dataset: &SceneDataset,
    config: &UncertaintyConfig,
    exec: Exec,
) -> Result<Vec<UncertaintyMap>> {
    let all: Vec<usize> = (0..dataset.views.len()).collect();
    uncertainty_maps_for(cloud, dataset, &all, config, exec)
}

/// Normalised uncertainty maps for the listed views.
pub fn uncertainty_maps_for(
    cloud: &GaussianCloud,
    dataset: &SceneDataset,
    targets: &[usize],
    config: &UncertaintyConfig,
    exec: Exec,
) -> Result<Vec<UncertaintyMap>> {
    config.validate()?;
    let cameras = dataset.cameras();
    if config.adjacent + 1 > cameras.len() {
        return Err(Error::TooManyAdjacentViews {
            requested: config.adjacent,
            available: cameras.len().saturating_sub(1),
        });
    }
    let renders: Vec<RenderOutput> = cameras.iter().map(|c| render_with(cloud, c, config.background, exec)).collect();
    let colors: Vec<&ImageBuffer> = match config.color_source {
        ColorSource::InputImages => dataset.views.iter().map(|v| &v.image).collect(),
        ColorSource::Renders => renders.iter().map(|r| &r.color).collect(),
    };
    targets
        .iter()
        .map(|&i| raw_map(i, &cameras, &colors, &renders, config, exec).map(|raw| normalize_uncertainty(&raw)))
        .collect()
}

/// Normalised uncertainty map of view `i`.
pub fn uncertainty_map(cloud: &GaussianCloud, dataset: &SceneDataset, i: usize, config: &UncertaintyConfig) -> Result<UncertaintyMap> {
    let mut maps = uncertainty_maps_for(cloud, dataset, &[i], config, Exec::default())?;
    Ok(maps.remove(0))
}

/// `clamp(U ⊙ (1 − M) + θ M, 0, 1)`.
pub fn fuse_mask(u: &UncertaintyMap, m: &MaskMap, theta: f64) -> Result<MaskMap> {
    if u.width != m.width || u.height != m.height {
        return Err(Error::dims("uncertainty map", m.dims(), (u.width, u.height)));
    }
    if !(theta >= 0.0) {
        return Err(Error::InvalidConfig(format!("theta must be non-negative, got {theta}")));
    }
    let data = u
        .data
        .iter()
        .zip(&m.data)
        .map(|(&uv, &mv)| (uv * (1.0 - mv) + theta * mv).clamp(0.0, 1.0))
        .collect();
    Ok(MaskMap {
        width: m.width,
        height: m.height,
        data,
    })
}
